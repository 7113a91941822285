#include "egoface/nn/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace egoface::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "weight files are written in host byte order");

void put_u32(std::ostream& os, std::uint32_t v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path)
{
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw std::runtime_error("truncated weight file " + path.string());
    }
    return v;
}

} // namespace

void save_weights(const NetworkState& state, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot write " + path.string());
    }
    os.write("EGFW", 4);
    put_u32(os, weights_format_version);
    put_u32(os, static_cast<std::uint32_t>(state.weights.size()));
    for (const auto& layer : state.weights) {
        put_u32(os, static_cast<std::uint32_t>(layer.size()));
        for (const Tensor& t : layer) {
            put_u32(os, static_cast<std::uint32_t>(t.rank()));
            for (const int d : t.shape()) {
                put_u32(os, static_cast<std::uint32_t>(d));
            }
            os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
        }
    }
    if (!os) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

NetworkState load_weights(const NetworkSpec& spec, const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open weight file " + path.string());
    }
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "EGFW", 4) != 0) {
        throw std::runtime_error(path.string() + " is not an EGFW weight file");
    }
    const std::uint32_t version = get_u32(is, path);
    if (version != weights_format_version) {
        throw std::runtime_error("unsupported weight file version " + std::to_string(version));
    }
    const auto shapes = infer_shapes(spec);
    const std::uint32_t layers = get_u32(is, path);
    if (layers != spec.layers.size()) {
        throw ShapeError("weight file has " + std::to_string(layers) + " layers, network has " +
                         std::to_string(spec.layers.size()));
    }
    NetworkState state;
    state.weights.resize(layers);
    state.adam_m.resize(layers);
    state.adam_v.resize(layers);
    for (std::uint32_t i = 0; i < layers; ++i) {
        const auto expected = weight_shapes(spec.layers[i], shapes[i]);
        const std::uint32_t count = get_u32(is, path);
        if (count != expected.size()) {
            throw ShapeError("weight file layer " + std::to_string(i) + " holds " + std::to_string(count) +
                             " tensors, expected " + std::to_string(expected.size()));
        }
        for (std::uint32_t k = 0; k < count; ++k) {
            Shape shape(get_u32(is, path));
            for (int& d : shape) {
                d = static_cast<int>(get_u32(is, path));
            }
            if (shape != expected[k]) {
                throw ShapeError("weight file layer " + std::to_string(i) + " shape " + shape_string(shape) +
                                 " differs from expected " + shape_string(expected[k]));
            }
            Tensor t(shape);
            if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
                throw std::runtime_error("truncated weight file " + path.string());
            }
            state.adam_m[i].emplace_back(shape);
            state.adam_v[i].emplace_back(shape);
            state.weights[i].push_back(std::move(t));
        }
    }
    return state;
}

nlohmann::json spec_to_json(const NetworkSpec& spec)
{
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerSpec& l : spec.layers) {
        nlohmann::json j{{"kind", to_string(l.kind)}};
        if (!l.name.empty()) {
            j["name"] = l.name;
        }
        switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::conv_transpose:
            j["out_channels"] = l.out_channels;
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            j["padding"] = l.padding;
            break;
        case LayerKind::dense:
            j["out_features"] = l.out_channels;
            break;
        case LayerKind::leaky_relu:
            j["slope"] = l.slope;
            break;
        case LayerKind::dropout:
            j["rate"] = l.rate;
            break;
        case LayerKind::concat:
            j["source"] = l.source;
            break;
        case LayerKind::scale_shift:
            j["scale"] = l.scale;
            j["shift"] = l.shift;
            break;
        default:
            break;
        }
        layers.push_back(std::move(j));
    }
    return {{"input_shape", spec.input_shape}, {"output_shape", spec.output_shape}, {"layers", layers}};
}

NetworkSpec spec_from_json(const nlohmann::json& j)
{
    NetworkSpec spec;
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.output_shape = j.at("output_shape").get<Shape>();
    for (const auto& lj : j.at("layers")) {
        LayerSpec l;
        l.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
        l.name = lj.value("name", std::string{});
        switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::conv_transpose:
            l.out_channels = lj.at("out_channels").get<int>();
            l.kernel = lj.at("kernel").get<int>();
            l.stride = lj.at("stride").get<int>();
            l.padding = lj.at("padding").get<int>();
            break;
        case LayerKind::dense:
            l.out_channels = lj.at("out_features").get<int>();
            break;
        case LayerKind::leaky_relu:
            l.slope = lj.at("slope").get<double>();
            break;
        case LayerKind::dropout:
            l.rate = lj.at("rate").get<double>();
            break;
        case LayerKind::concat:
            l.source = lj.at("source").get<int>();
            break;
        case LayerKind::scale_shift:
            l.scale = lj.at("scale").get<double>();
            l.shift = lj.at("shift").get<double>();
            break;
        default:
            break;
        }
        spec.layers.push_back(std::move(l));
    }
    infer_shapes(spec);
    return spec;
}

void save_spec(const NetworkSpec& spec, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot write " + path.string());
    }
    os << spec_to_json(spec).dump(2) << '\n';
}

NetworkSpec load_spec(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw std::runtime_error("cannot open network description " + path.string());
    }
    return spec_from_json(nlohmann::json::parse(is));
}

} // namespace egoface::nn
