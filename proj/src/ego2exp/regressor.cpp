#include "egoface/ego2exp/regressor.hpp"

#include "egoface/common/error.hpp"
#include "egoface/common/rng.hpp"
#include "egoface/nn/io.hpp"
#include "egoface/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace egoface::ego2exp {

namespace {

void require(bool ok, const std::string& field, const std::string& why)
{
    if (!ok) {
        throw ConfigError("ego2exp." + field + ": " + why);
    }
}

template <typename V>
void read_field(const nlohmann::json& j, const char* key, V& out)
{
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("ego2exp.") + key + ": wrong type");
    }
}

std::vector<int> preset_channels(const std::string& preset)
{
    if (preset == "tiny") {
        return {4, 8, 16, 32, 64};
    }
    if (preset == "small") {
        return {8, 16, 32, 64, 128};
    }
    if (preset == "large") {
        return {16, 32, 64, 128, 256};
    }
    throw ConfigError("ego2exp.preset: unknown preset '" + preset + "' (tiny | small | large)");
}

int hidden_width(const std::string& preset)
{
    return preset == "large" ? 256 : (preset == "tiny" ? 64 : 128);
}

// Batched inference-mode forward over samples [begin, end).
nn::Tensor infer_batch(const Regressor& reg, const Samples& s, std::size_t begin, std::size_t end)
{
    const int n = static_cast<int>(end - begin);
    nn::Tensor x(nn::batched(n, reg.spec.input_shape));
    std::copy(s.sample(begin), s.sample(begin) + static_cast<std::size_t>(n) * s.stride(), x.data());
    return nn::forward(reg.state, reg.spec, x, false);
}

double validation_mse(const Regressor& reg, const Samples& val)
{
    if (val.size() == 0) {
        return 0.0;
    }
    const int d = reg.cfg.output_dim;
    double se = 0.0;
    constexpr std::size_t chunk = 64;
    for (std::size_t b = 0; b < val.size(); b += chunk) {
        const std::size_t e = std::min(val.size(), b + chunk);
        const nn::Tensor y = infer_batch(reg, val, b, e);
        for (std::size_t i = b; i < e; ++i) {
            for (int k = 0; k < d; ++k) {
                const double p = y[(i - b) * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)] *
                                 reg.target_scale(k);
                se += (p - val.targets[i](k)) * (p - val.targets[i](k));
            }
        }
    }
    return se / (static_cast<double>(val.size()) * d);
}

} // namespace

void RegressorConfig::validate() const
{
    require(input_size >= 32 && input_size % 32 == 0, "input_size", "must be a positive multiple of 32");
    require(output_dim >= 1, "output_dim", "must be positive");
    preset_channels(preset);
    require(dropout >= 0 && dropout < 1, "dropout", "must lie in [0, 1)");
    require(batch_size >= 1, "batch_size", "must be positive");
    require(epochs >= 1, "epochs", "must be positive");
    require(adam.learning_rate > 0, "learning_rate", "must be positive");
    require(adam.beta1 >= 0 && adam.beta1 < 1, "beta1", "must lie in [0, 1)");
    require(adam.beta2 >= 0 && adam.beta2 < 1, "beta2", "must lie in [0, 1)");
    require(adam.epsilon > 0, "epsilon", "must be positive");
}

nlohmann::json regressor_config_to_json(const RegressorConfig& c)
{
    return {{"input_size", c.input_size},
            {"preset", c.preset},
            {"dropout", c.dropout},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"learning_rate", c.adam.learning_rate},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"epsilon", c.adam.epsilon}};
}

RegressorConfig regressor_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) {
        throw ConfigError("ego2exp: expected an object");
    }
    RegressorConfig c;
    const nlohmann::json known = regressor_config_to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown key ego2exp." + key);
        }
    }
    read_field(j, "input_size", c.input_size);
    read_field(j, "preset", c.preset);
    read_field(j, "dropout", c.dropout);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "epochs", c.epochs);
    read_field(j, "learning_rate", c.adam.learning_rate);
    read_field(j, "beta1", c.adam.beta1);
    read_field(j, "beta2", c.adam.beta2);
    read_field(j, "epsilon", c.adam.epsilon);
    c.validate();
    return c;
}

double FaceMask::coverage() const
{
    if (bits.empty()) {
        return 0.0;
    }
    return static_cast<double>(std::count(bits.begin(), bits.end(), std::uint8_t{1})) /
           static_cast<double>(bits.size());
}

void FaceMask::validate() const
{
    if (width <= 0 || height <= 0 || bits.size() != static_cast<std::size_t>(width) * height) {
        throw std::invalid_argument("face mask has inconsistent dimensions");
    }
    if (coverage() < 0.05) {
        throw std::invalid_argument("face mask covers less than 5% of the image");
    }
}

FaceMask full_mask(int size)
{
    return {size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size, 1)};
}

FaceMask mask_from_render(const render::RenderResult& r, int dilation_px, int size)
{
    const int w = r.image.width(), h = r.image.height();
    if (size <= 0 || w % size != 0 || h % size != 0) {
        throw std::invalid_argument("render size " + std::to_string(w) + "x" + std::to_string(h) +
                                    " is not a multiple of the mask size " + std::to_string(size));
    }
    std::vector<std::uint8_t> cov(static_cast<std::size_t>(w) * h), tmp(cov.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            cov[static_cast<std::size_t>(y) * w + x] = r.covered(x, y) ? 1 : 0;
        }
    }
    // separable square dilation
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::uint8_t v = 0;
            for (int dx = std::max(0, x - dilation_px); dx <= std::min(w - 1, x + dilation_px) && !v; ++dx) {
                v = cov[static_cast<std::size_t>(y) * w + dx];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = v;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::uint8_t v = 0;
            for (int dy = std::max(0, y - dilation_px); dy <= std::min(h - 1, y + dilation_px) && !v; ++dy) {
                v = tmp[static_cast<std::size_t>(dy) * w + x];
            }
            cov[static_cast<std::size_t>(y) * w + x] = v;
        }
    }
    FaceMask m{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size, 0)};
    const int fx = w / size, fy = h / size;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (cov[static_cast<std::size_t>(y) * w + x]) {
                m.bits[static_cast<std::size_t>(y / fy) * size + x / fx] = 1;
            }
        }
    }
    return m;
}

FaceMask make_face_mask(const model::FaceBasis& basis, const model::ParamVector& params,
                        const camera::FisheyeCamera& cam, int size)
{
    const model::ShadedMesh mesh = model::build_shaded_mesh(basis, params);
    const auto r = render::rasterize_egocentric(mesh, cam, Eigen::Vector3d::Zero());
    const int dilation = static_cast<int>(std::lround(0.06 * cam.width));
    FaceMask m = mask_from_render(r, dilation, size);
    m.validate();
    return m;
}

render::Image apply_mask(const render::Image& image, const FaceMask& mask)
{
    if (image.width() != mask.width || image.height() != mask.height) {
        throw std::invalid_argument("mask " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                                    " does not match image " + std::to_string(image.width()) + "x" +
                                    std::to_string(image.height()));
    }
    render::Image out(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            if (mask.at(x, y)) {
                out.set(x, y, image.pixel(x, y));
            }
        }
    }
    return out;
}

void save_mask(const FaceMask& mask, const std::filesystem::path& path)
{
    render::Image img(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(x, y)) {
                img.set(x, y, Eigen::Vector3d::Ones());
            }
        }
    }
    render::write_ppm(img, path);
}

FaceMask load_mask(const std::filesystem::path& path)
{
    const render::Image img = render::read_ppm(path);
    FaceMask m{img.width(), img.height(), std::vector<std::uint8_t>(img.pixel_count(), 0)};
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            m.bits[static_cast<std::size_t>(y) * m.width + x] = img.at(x, y, 0) > 0.5 ? 1 : 0;
        }
    }
    return m;
}

nn::NetworkSpec regressor_spec(const RegressorConfig& cfg)
{
    cfg.validate();
    nn::NetworkSpec spec;
    spec.input_shape = {3, cfg.input_size, cfg.input_size};
    int block = 1;
    for (const int c : preset_channels(cfg.preset)) {
        spec.layers.push_back(nn::LayerSpec::conv(c, 4, 2, 1, "conv" + std::to_string(block++)));
        spec.layers.push_back(nn::LayerSpec::leaky_relu(0.2));
    }
    spec.layers.push_back(nn::LayerSpec::dense(hidden_width(cfg.preset), "fc1"));
    spec.layers.push_back(nn::LayerSpec::leaky_relu(0.2));
    if (cfg.dropout > 0) {
        spec.layers.push_back(nn::LayerSpec::dropout(cfg.dropout));
    }
    spec.layers.push_back(nn::LayerSpec::dense(cfg.output_dim, "fc2"));
    spec.output_shape = {cfg.output_dim};
    nn::infer_shapes(spec);
    return spec;
}

Regressor build_regressor(const RegressorConfig& cfg, std::uint64_t seed)
{
    Regressor r;
    r.cfg = cfg;
    r.spec = regressor_spec(cfg);
    r.state = nn::build_network<float>(r.spec, derive_seed(seed, 1));
    r.target_scale = VectorXd::Ones(cfg.output_dim);
    r.mask = full_mask(cfg.input_size);
    return r;
}

std::vector<float> prepare_input(const render::Image& ego, const FaceMask& mask, int input_size)
{
    const render::Image small = (ego.width() == input_size && ego.height() == input_size)
                                    ? ego
                                    : render::resize_area(ego, input_size, input_size);
    const render::Image masked = apply_mask(small, mask);
    const std::size_t plane = static_cast<std::size_t>(input_size) * input_size;
    std::vector<float> out(3 * plane);
    for (int y = 0; y < input_size; ++y) {
        for (int x = 0; x < input_size; ++x) {
            for (int c = 0; c < 3; ++c) {
                out[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * input_size + x] =
                    static_cast<float>(masked.at(x, y, c));
            }
        }
    }
    return out;
}

void Samples::add(const std::vector<float>& input, const VectorXd& target)
{
    if (input.size() != stride()) {
        throw std::invalid_argument("sample input has " + std::to_string(input.size()) + " values, expected " +
                                    std::to_string(stride()));
    }
    pixels.insert(pixels.end(), input.begin(), input.end());
    targets.push_back(target);
}

Samples load_samples(const sim::DatasetManifest& manifest, const std::vector<model::ParamVector>& params,
                     const std::vector<int>& indices, const FaceMask& mask, int input_size)
{
    if (manifest.kind != sim::DatasetKind::ego2exp) {
        throw std::invalid_argument("ego2exp samples need an ego2exp manifest");
    }
    Samples s;
    s.input_size = input_size;
    s.pixels.reserve(indices.size() * s.stride());
    for (const int i : indices) {
        const auto& e = manifest.entries.at(static_cast<std::size_t>(i));
        s.add(prepare_input(render::read_ppm(manifest.resolve(e.ego)), mask, input_size),
              params.at(static_cast<std::size_t>(i)).delta);
    }
    return s;
}

TrainResult train_regressor(const Samples& train, const Samples& validation, const RegressorConfig& cfg,
                            const VectorXd& target_scale, const FaceMask& mask, std::uint64_t seed,
                            const EpochCallback& on_epoch)
{
    cfg.validate();
    if (train.size() == 0) {
        throw std::invalid_argument("ego2exp training needs at least one sample");
    }
    if (train.input_size != cfg.input_size || (validation.size() > 0 && validation.input_size != cfg.input_size)) {
        throw std::invalid_argument("sample resolution does not match the regressor input size");
    }
    if (target_scale.size() != cfg.output_dim || (target_scale.array() <= 0).any()) {
        throw std::invalid_argument("target scale must hold one positive value per output");
    }
    TrainResult res;
    res.model = build_regressor(cfg, seed);
    res.model.target_scale = target_scale;
    res.model.mask = mask;
    Regressor& reg = res.model;

    const int d = cfg.output_dim;
    const std::size_t n = train.size();
    std::vector<std::size_t> order(n);
    std::uint64_t step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        double se = 0.0;
        for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t b = std::min(n - begin, static_cast<std::size_t>(cfg.batch_size));
            const int bi = static_cast<int>(b);
            nn::Tensor x(nn::batched(bi, reg.spec.input_shape));
            nn::Tensor z({bi, d});
            for (std::size_t k = 0; k < b; ++k) {
                const std::size_t src = order[begin + k];
                std::copy(train.sample(src), train.sample(src) + train.stride(), x.data() + k * train.stride());
                for (int j = 0; j < d; ++j) {
                    z[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] =
                        static_cast<float>(train.targets[src](j) / target_scale(j));
                }
            }
            nn::ForwardCache<float> cache;
            const nn::Tensor y = nn::forward(reg.state, reg.spec, x, true, &cache, derive_seed(seed, step++));
            const auto loss = nn::mse_loss(y, z);
            if (!std::isfinite(loss.value)) {
                throw NumericError("ego2exp loss became non-finite at epoch " + std::to_string(epoch));
            }
            const auto grads = nn::backward(reg.state, reg.spec, cache, loss.gradient);
            nn::adam_step(reg.state, grads.weights, cfg.adam);
            for (std::size_t k = 0; k < b; ++k) {
                for (int j = 0; j < d; ++j) {
                    const std::size_t q = k * static_cast<std::size_t>(d) + static_cast<std::size_t>(j);
                    const double diff = (static_cast<double>(y[q]) - z[q]) * target_scale(j);
                    se += diff * diff;
                }
            }
        }
        res.curve.push_back({epoch, se / (static_cast<double>(n) * d), validation_mse(reg, validation)});
        if (on_epoch) {
            on_epoch(res.curve.back());
        }
    }
    return res;
}

TrainResult train_regressor(const sim::DatasetManifest& manifest, const model::FaceBasis& basis,
                            const camera::FisheyeCamera& ego_cam, const RegressorConfig& cfg_in, std::uint64_t seed,
                            const EpochCallback& on_epoch)
{
    RegressorConfig cfg = cfg_in;
    cfg.output_dim = basis.dim_delta();
    const auto params = sim::load_dataset_params(manifest);
    const auto train_idx = manifest.indices(false);
    if (train_idx.empty()) {
        throw std::invalid_argument("ego2exp manifest has no training entries");
    }
    const FaceMask mask = make_face_mask(basis, params[static_cast<std::size_t>(train_idx.front())], ego_cam,
                                         cfg.input_size);
    const Samples train = load_samples(manifest, params, train_idx, mask, cfg.input_size);
    const Samples val = load_samples(manifest, params, manifest.indices(true), mask, cfg.input_size);
    return train_regressor(train, val, cfg, basis.sigma_delta, mask, seed, on_epoch);
}

VectorXd predict_prepared(const Regressor& reg, const float* input)
{
    nn::Tensor x(nn::batched(1, reg.spec.input_shape));
    std::copy(input, input + x.size(), x.data());
    const nn::Tensor y = nn::forward(reg.state, reg.spec, x, false);
    VectorXd out(reg.cfg.output_dim);
    for (int k = 0; k < reg.cfg.output_dim; ++k) {
        out(k) = static_cast<double>(y[static_cast<std::size_t>(k)]) * reg.target_scale(k);
    }
    return out;
}

VectorXd predict_expressions(const Regressor& reg, const render::Image& ego)
{
    return predict_prepared(reg, prepare_input(ego, reg.mask, reg.cfg.input_size).data());
}

VectorXd mean_target(const Samples& samples)
{
    if (samples.size() == 0) {
        throw std::invalid_argument("mean of an empty sample set");
    }
    VectorXd m = VectorXd::Zero(samples.targets.front().size());
    for (const auto& t : samples.targets) {
        m += t;
    }
    return m / static_cast<double>(samples.size());
}

double expression_mse(const std::vector<VectorXd>& predicted, const std::vector<VectorXd>& truth)
{
    if (predicted.size() != truth.size() || truth.empty()) {
        throw std::invalid_argument("expression MSE needs equally many non-zero predictions and targets");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        sum += (predicted[i] - truth[i]).squaredNorm() / static_cast<double>(truth[i].size());
    }
    return sum / static_cast<double>(truth.size());
}

void write_curve_csv(const std::vector<CurveRow>& curve, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot write " + path.string());
    }
    os << "epoch,train_mse,val_mse\n";
    os.precision(9);
    for (const CurveRow& r : curve) {
        os << r.epoch << ',' << r.train_mse << ',' << r.val_mse << '\n';
    }
}

void save_regressor(const Regressor& reg, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    nn::save_weights(reg.state, dir / "regressor.egfw");
    nlohmann::json cfg = regressor_config_to_json(reg.cfg);
    cfg["output_dim"] = reg.cfg.output_dim;
    const nlohmann::json j{{"spec", nn::spec_to_json(reg.spec)},
                           {"config", cfg},
                           {"target_scale", std::vector<double>(reg.target_scale.data(),
                                                                reg.target_scale.data() + reg.target_scale.size())}};
    std::ofstream os(dir / "regressor.json");
    os << j.dump(1) << '\n';
    if (!os) {
        throw std::runtime_error("failed writing " + (dir / "regressor.json").string());
    }
    save_mask(reg.mask, dir / "mask.ppm");
}

Regressor load_regressor(const std::filesystem::path& dir)
{
    for (const char* name : {"regressor.json", "regressor.egfw", "mask.ppm"}) {
        if (!std::filesystem::exists(dir / name)) {
            throw MissingArtifactError("missing trained regressor file " + (dir / name).string());
        }
    }
    std::ifstream is(dir / "regressor.json");
    const nlohmann::json j = nlohmann::json::parse(is);
    Regressor r;
    nlohmann::json cfg = j.at("config");
    const int out_dim = cfg.at("output_dim").get<int>();
    cfg.erase("output_dim");
    r.cfg = regressor_config_from_json(cfg);
    r.cfg.output_dim = out_dim;
    r.spec = nn::spec_from_json(j.at("spec"));
    r.state = nn::load_weights(r.spec, dir / "regressor.egfw");
    const auto scale = j.at("target_scale").get<std::vector<double>>();
    r.target_scale = Eigen::Map<const VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
    r.mask = load_mask(dir / "mask.ppm");
    return r;
}

} // namespace egoface::ego2exp
