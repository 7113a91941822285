#include "egoface/exp2vreal/translator.hpp"

#include "egoface/common/error.hpp"
#include "egoface/common/rng.hpp"
#include "egoface/nn/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace egoface::exp2vreal {

namespace {

void require(bool ok, const std::string& field, const std::string& why)
{
    if (!ok) {
        throw ConfigError("exp2vreal." + field + ": " + why);
    }
}

nlohmann::json adam_to_json(const nn::AdamConfig& a)
{
    return {{"learning_rate", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"epsilon", a.epsilon}};
}

template <typename V>
void read_field(const nlohmann::json& j, const std::string& path, const char* key, V& out)
{
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(path + "." + key + ": wrong type");
    }
}

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& path)
{
    if (!j.is_object()) {
        throw ConfigError(path + ": expected an object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown key " + path + "." + key);
        }
    }
}

nn::AdamConfig adam_from_json(const nlohmann::json& j, const std::string& path, nn::AdamConfig a)
{
    reject_unknown(j, adam_to_json(a), path);
    read_field(j, path, "learning_rate", a.learning_rate);
    read_field(j, path, "beta1", a.beta1);
    read_field(j, path, "beta2", a.beta2);
    read_field(j, path, "epsilon", a.epsilon);
    return a;
}

void validate_adam(const nn::AdamConfig& a, const std::string& field)
{
    require(a.learning_rate > 0, field + ".learning_rate", "must be positive");
    require(a.beta1 >= 0 && a.beta1 < 1, field + ".beta1", "must lie in [0, 1)");
    require(a.beta2 >= 0 && a.beta2 < 1, field + ".beta2", "must lie in [0, 1)");
    require(a.epsilon > 0, field + ".epsilon", "must be positive");
}

int width_of(const GanConfig& cfg, int row)
{
    return std::max(4, static_cast<int>(std::lround(table_channels[row - 1] * cfg.channel_scale)));
}

// Channels [first, first + count) of [N, C, H, W]
template <typename T>
nn::BasicTensor<T> slice_channels(const nn::BasicTensor<T>& x, int first, int count)
{
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    nn::BasicTensor<T> out({n, count, h, w});
    for (int i = 0; i < n; ++i) {
        std::copy_n(x.data() + (static_cast<std::size_t>(i) * c + first) * plane, count * plane,
                    out.data() + static_cast<std::size_t>(i) * count * plane);
    }
    return out;
}

double clamp_probability(double p)
{
    return std::clamp(p, probability_clamp, 1.0 - probability_clamp);
}

void check_probabilities(const nn::Tensor& t, const char* what)
{
    for (const float v : t.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw std::invalid_argument(std::string(what) + " holds a value outside [0, 1]");
        }
    }
}

void copy_bytes(const std::uint8_t* src, std::size_t n, float* dst)
{
    for (std::size_t k = 0; k < n; ++k) {
        dst[k] = static_cast<float>(src[k]) / 255.0f;
    }
}

void append_image(const render::Image& img, std::vector<std::uint8_t>& out)
{
    const std::size_t plane = img.pixel_count();
    const std::size_t base = out.size();
    out.resize(base + 3 * plane);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                out[base + static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * img.width() + x] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(img.at(x, y, c), 0.0, 1.0) * 255.0));
            }
        }
    }
}

void write_network(const nn::NetworkSpec& spec, const nn::NetworkState& state, const GanConfig& cfg,
                   const std::filesystem::path& stem)
{
    nn::save_weights(state, stem.string() + ".egfw");
    std::ofstream os(stem.string() + ".json");
    os << nlohmann::json{{"spec", nn::spec_to_json(spec)}, {"config", gan_config_to_json(cfg)}}.dump(1) << '\n';
    if (!os) {
        throw std::runtime_error("failed writing " + stem.string() + ".json");
    }
}

} // namespace

std::string to_string(Variant v)
{
    return v == Variant::full ? "full" : "optimized";
}

Variant parse_variant(const std::string& name)
{
    if (name == "full") {
        return Variant::full;
    }
    if (name == "optimized") {
        return Variant::optimized;
    }
    throw ConfigError("exp2vreal.variant: unknown variant '" + name + "' (full | optimized)");
}

void GanConfig::validate() const
{
    require(lambda >= 0, "lambda", "must be non-negative");
    require(adversarial_weight >= 0, "adversarial_weight", "must be non-negative");
    require(window >= 1 && window % 2 == 1, "window", "must be odd and at least 1");
    require(batch_size >= 1, "batch_size", "must be positive");
    require(epochs >= 1, "epochs", "must be positive");
    require(full_size >= 128 && full_size % 128 == 0, "full_size", "must be a positive multiple of 128");
    require(optimized_size >= 16 && optimized_size % 16 == 0, "optimized_size",
            "must be a positive multiple of 16");
    require(channel_scale > 0 && channel_scale <= 1, "channel_scale", "must lie in (0, 1]");
    validate_adam(generator_adam, "generator_adam");
    validate_adam(discriminator_adam, "discriminator_adam");
}

nlohmann::json gan_config_to_json(const GanConfig& c)
{
    return {{"variant", to_string(c.variant)},
            {"lambda", c.lambda},
            {"adversarial_weight", c.adversarial_weight},
            {"window", c.window},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"full_size", c.full_size},
            {"optimized_size", c.optimized_size},
            {"channel_scale", c.channel_scale},
            {"generator_adam", adam_to_json(c.generator_adam)},
            {"discriminator_adam", adam_to_json(c.discriminator_adam)}};
}

GanConfig gan_config_from_json(const nlohmann::json& j)
{
    GanConfig c;
    reject_unknown(j, gan_config_to_json(c), "exp2vreal");
    std::string variant = to_string(c.variant);
    read_field(j, "exp2vreal", "variant", variant);
    c.variant = parse_variant(variant);
    read_field(j, "exp2vreal", "lambda", c.lambda);
    read_field(j, "exp2vreal", "adversarial_weight", c.adversarial_weight);
    read_field(j, "exp2vreal", "window", c.window);
    read_field(j, "exp2vreal", "batch_size", c.batch_size);
    read_field(j, "exp2vreal", "epochs", c.epochs);
    read_field(j, "exp2vreal", "full_size", c.full_size);
    read_field(j, "exp2vreal", "optimized_size", c.optimized_size);
    read_field(j, "exp2vreal", "channel_scale", c.channel_scale);
    if (j.contains("generator_adam")) {
        c.generator_adam = adam_from_json(j.at("generator_adam"), "exp2vreal.generator_adam", c.generator_adam);
    }
    if (j.contains("discriminator_adam")) {
        c.discriminator_adam =
            adam_from_json(j.at("discriminator_adam"), "exp2vreal.discriminator_adam", c.discriminator_adam);
    }
    c.validate();
    return c;
}

bool same_config(const GanConfig& a, const GanConfig& b)
{
    return gan_config_to_json(a) == gan_config_to_json(b);
}

nn::NetworkSpec generator_spec(const GanConfig& cfg)
{
    cfg.validate();
    const bool full = cfg.variant == Variant::full;
    const int first = full ? 1 : 2, last = full ? 7 : 5;
    const int size = cfg.image_size();
    nn::NetworkSpec spec;
    spec.input_shape = {3 * cfg.window, size, size};
    std::vector<int> encoder_out(8, -1);
    auto& L = spec.layers;
    for (int k = first; k <= last; ++k) {
        L.push_back(nn::LayerSpec::conv(width_of(cfg, k), 4, 2, 1, "Encoder" + std::to_string(k)));
        if (k != first && k != last) {
            L.push_back(nn::LayerSpec::instance_norm());
        }
        L.push_back(nn::LayerSpec::leaky_relu(0.2));
        encoder_out[static_cast<std::size_t>(k)] = static_cast<int>(L.size()) - 1;
    }
    L.push_back(nn::LayerSpec::conv(width_of(cfg, last), 3, 1, 1, "Decoder" + std::to_string(last)));
    L.push_back(nn::LayerSpec::relu());
    for (int k = last - 1; k >= first; --k) {
        L.push_back(nn::LayerSpec::concat(encoder_out[static_cast<std::size_t>(k + 1)]));
        L.push_back(nn::LayerSpec::conv_transpose(width_of(cfg, k), 4, 2, 1, "Decoder" + std::to_string(k)));
        L.push_back(nn::LayerSpec::instance_norm());
        L.push_back(nn::LayerSpec::relu());
    }
    L.push_back(nn::LayerSpec::concat(encoder_out[static_cast<std::size_t>(first)]));
    L.push_back(nn::LayerSpec::conv_transpose(3, 4, 2, 1, "Output"));
    L.push_back(nn::LayerSpec::tanh());
    L.push_back(nn::LayerSpec::scale_shift(0.5, 0.5));
    spec.output_shape = {3, size, size};
    nn::infer_shapes(spec);
    return spec;
}

nn::NetworkSpec discriminator_spec(const GanConfig& cfg)
{
    cfg.validate();
    const int size = cfg.image_size();
    const int c = std::max(4, static_cast<int>(std::lround(64 * cfg.channel_scale)));
    nn::NetworkSpec spec;
    spec.input_shape = {3 * cfg.window + 3, size, size};
    spec.layers = {nn::LayerSpec::conv(c, 4, 2, 1, "D1"),     nn::LayerSpec::leaky_relu(0.2),
                   nn::LayerSpec::conv(2 * c, 4, 2, 1, "D2"), nn::LayerSpec::instance_norm(),
                   nn::LayerSpec::leaky_relu(0.2),            nn::LayerSpec::conv(4 * c, 4, 2, 1, "D3"),
                   nn::LayerSpec::instance_norm(),            nn::LayerSpec::leaky_relu(0.2),
                   nn::LayerSpec::conv(1, 3, 1, 1, "Patch"),  nn::LayerSpec::sigmoid()};
    spec.output_shape = {1, size / 8, size / 8};
    nn::infer_shapes(spec);
    return spec;
}

std::vector<ArchRow> architecture_table(const nn::NetworkSpec& spec)
{
    const auto shapes = nn::infer_shapes(spec);
    std::vector<ArchRow> rows;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const std::string& name = spec.layers[i].name;
        if (name.rfind("Encoder", 0) == 0 || name.rfind("Decoder", 0) == 0) {
            const nn::Shape& s = shapes[i + 1];
            rows.push_back({name, s[1], s[2], s[0]});
        }
    }
    return rows;
}

Gan build_gan(const GanConfig& cfg, std::uint64_t seed)
{
    Gan g;
    g.cfg = cfg;
    g.g_spec = generator_spec(cfg);
    g.d_spec = discriminator_spec(cfg);
    g.g_state = nn::build_network<float>(g.g_spec, derive_seed(seed, 11));
    g.d_state = nn::build_network<float>(g.d_spec, derive_seed(seed, 12));
    return g;
}

template <typename T>
nn::BasicTensor<T> concat_channels(const nn::BasicTensor<T>& x, const nn::BasicTensor<T>& y)
{
    const int n = x.dim(0), a = x.dim(1), b = y.dim(1), h = x.dim(2), w = x.dim(3);
    if (y.dim(0) != n || y.dim(2) != h || y.dim(3) != w) {
        throw nn::ShapeError("cannot concatenate " + nn::shape_string(x.shape()) + " and " +
                             nn::shape_string(y.shape()));
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    nn::BasicTensor<T> out({n, a + b, h, w});
    for (int i = 0; i < n; ++i) {
        T* dst = out.data() + static_cast<std::size_t>(i) * (a + b) * plane;
        std::copy_n(x.data() + static_cast<std::size_t>(i) * a * plane, a * plane, dst);
        std::copy_n(y.data() + static_cast<std::size_t>(i) * b * plane, b * plane, dst + a * plane);
    }
    return out;
}

template <typename T>
double loss_l1(const nn::BasicTensor<T>& generated, const nn::BasicTensor<T>& ground_truth)
{
    if (generated.shape() != ground_truth.shape()) {
        throw nn::ShapeError("L1 loss shapes differ: " + nn::shape_string(generated.shape()) + " vs " +
                             nn::shape_string(ground_truth.shape()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        sum += std::abs(static_cast<double>(generated[i]) - static_cast<double>(ground_truth[i]));
    }
    return sum / static_cast<double>(generated.size());
}

AdversarialLoss loss_adv(const nn::Tensor& d_real, const nn::Tensor& d_fake)
{
    check_probabilities(d_real, "real discriminator output");
    check_probabilities(d_fake, "fake discriminator output");
    double log_real = 0.0, log_not_fake = 0.0, log_fake = 0.0;
    for (const float v : d_real.values()) {
        log_real += std::log(clamp_probability(v));
    }
    for (const float v : d_fake.values()) {
        const double p = clamp_probability(v);
        log_not_fake += std::log(1.0 - p);
        log_fake += std::log(p);
    }
    AdversarialLoss out;
    out.objective = log_real / static_cast<double>(d_real.size()) + log_not_fake / static_cast<double>(d_fake.size());
    out.discriminator = -out.objective;
    out.generator = -log_fake / static_cast<double>(d_fake.size());
    return out;
}

template <typename T>
GeneratorObjective<T> generator_objective(const nn::BasicTensor<T>& d_fake, const nn::BasicTensor<T>& generated,
                                          const nn::BasicTensor<T>& ground_truth, double lambda,
                                          double adversarial_weight)
{
    for (const T v : d_fake.values()) {
        if (!(v >= T(0) && v <= T(1))) {
            throw std::invalid_argument("fake discriminator output holds a value outside [0, 1]");
        }
    }
    GeneratorObjective<T> o;
    o.l1 = loss_l1(generated, ground_truth);
    const double nd = static_cast<double>(d_fake.size()), nf = static_cast<double>(generated.size());
    o.grad_d_fake = nn::BasicTensor<T>(d_fake.shape());
    o.grad_generated = nn::BasicTensor<T>(generated.shape());
    double log_sum = 0.0;
    for (std::size_t i = 0; i < d_fake.size(); ++i) {
        const double raw = d_fake[i];
        const double p = clamp_probability(raw);
        const double term = -std::log(p);
        log_sum += term;
        o.total += adversarial_weight * term / nd;
        o.grad_d_fake[i] = raw == p ? static_cast<T>(-adversarial_weight / (p * nd)) : T(0);
    }
    o.adversarial = log_sum / nd;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        const double diff = static_cast<double>(generated[i]) - static_cast<double>(ground_truth[i]);
        o.total += lambda * std::abs(diff) / nf;
        o.grad_generated[i] = static_cast<T>(diff > 0 ? lambda / nf : (diff < 0 ? -lambda / nf : 0.0));
    }
    return o;
}

template <typename T>
GeneratorObjective<T> generator_loss(const nn::BasicNetworkState<T>& d_state, const nn::NetworkSpec& d_spec,
                                     const nn::BasicTensor<T>& window, const nn::BasicTensor<T>& generated,
                                     const nn::BasicTensor<T>& ground_truth, double lambda, double adversarial_weight)
{
    if (adversarial_weight == 0.0) {
        return generator_objective(nn::BasicTensor<T>({generated.dim(0), 1, 1, 1}, T(0.5)), generated,
                                   ground_truth, lambda, 0.0);
    }
    nn::ForwardCache<T> cache;
    const auto d_fake = nn::forward(d_state, d_spec, concat_channels(window, generated), true, &cache);
    GeneratorObjective<T> o = generator_objective(d_fake, generated, ground_truth, lambda, adversarial_weight);
    const auto through_d = nn::backward(d_state, d_spec, cache, o.grad_d_fake);
    const auto d_generated = slice_channels(through_d.input, window.dim(1), generated.dim(1));
    for (std::size_t i = 0; i < o.grad_generated.size(); ++i) {
        o.grad_generated[i] += d_generated[i];
    }
    return o;
}

#define EGOFACE_INSTANTIATE_GENERATOR_LOSS(T)                                                                    \
    template double loss_l1<T>(const nn::BasicTensor<T>&, const nn::BasicTensor<T>&);                           \
    template nn::BasicTensor<T> concat_channels<T>(const nn::BasicTensor<T>&, const nn::BasicTensor<T>&);       \
    template GeneratorObjective<T> generator_objective<T>(const nn::BasicTensor<T>&, const nn::BasicTensor<T>&,  \
                                                          const nn::BasicTensor<T>&, double, double);           \
    template GeneratorObjective<T> generator_loss<T>(const nn::BasicNetworkState<T>&, const nn::NetworkSpec&,    \
                                                     const nn::BasicTensor<T>&, const nn::BasicTensor<T>&,      \
                                                     const nn::BasicTensor<T>&, double, double);

EGOFACE_INSTANTIATE_GENERATOR_LOSS(float)
EGOFACE_INSTANTIATE_GENERATOR_LOSS(double)

std::vector<int> FrameSet::window(int i, int w) const
{
    const int n = static_cast<int>(entries());
    const int seq = sequence.at(static_cast<std::size_t>(i));
    std::vector<int> out;
    for (int o = -(w / 2); o <= w / 2; ++o) {
        int j = i;
        const int step = o < 0 ? -1 : 1;
        for (int s = 0; s < std::abs(o); ++s) {
            const int next = j + step;
            if (next < 0 || next >= n || sequence[static_cast<std::size_t>(next)] != seq) {
                break;
            }
            j = next;
        }
        out.push_back(j);
    }
    return out;
}

FrameSet load_frames(const sim::DatasetManifest& manifest, int size)
{
    if (manifest.kind != sim::DatasetKind::exp2vreal) {
        throw std::invalid_argument("exp2vreal frames need an exp2vreal manifest");
    }
    FrameSet f;
    f.size = size;
    const auto load = [&](const std::string& rel) {
        const render::Image img = render::read_ppm(manifest.resolve(rel));
        return img.width() == size && img.height() == size ? img : render::resize_area(img, size, size);
    };
    for (std::size_t k = 0; k < manifest.entries.size(); ++k) {
        const auto& e = manifest.entries[k];
        if (e.index != static_cast<int>(k)) {
            throw std::invalid_argument("manifest entries must be stored in index order");
        }
        append_image(load(e.albedo), f.albedo);
        append_image(load(e.front), f.front);
        f.sequence.push_back(e.sequence);
        f.frame.push_back(e.frame);
        (e.test ? f.test : f.train).push_back(e.index);
    }
    return f;
}

nn::Tensor window_input(const FrameSet& data, int i, int w)
{
    nn::Tensor x({1, 3 * w, data.size, data.size});
    const auto idx = data.window(i, w);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        copy_bytes(data.albedo.data() + static_cast<std::size_t>(idx[k]) * data.plane(), data.plane(),
                   x.data() + k * data.plane());
    }
    return x;
}

nn::Tensor front_target(const FrameSet& data, int i)
{
    nn::Tensor y({1, 3, data.size, data.size});
    copy_bytes(data.front.data() + static_cast<std::size_t>(i) * data.plane(), data.plane(), y.data());
    return y;
}

GanTrainResult train_cgan(const FrameSet& data, const GanConfig& cfg, std::uint64_t seed,
                          const std::function<void(const GanCurveRow&)>& on_epoch)
{
    cfg.validate();
    if (data.train.empty()) {
        throw std::invalid_argument("exp2vreal training needs at least one training frame");
    }
    if (data.size != cfg.image_size()) {
        throw std::invalid_argument("frames of size " + std::to_string(data.size) + " do not match the " +
                                    to_string(cfg.variant) + " generator size " + std::to_string(cfg.image_size()));
    }
    GanTrainResult res;
    res.gan = build_gan(cfg, seed);
    Gan& gan = res.gan;
    const int w = cfg.window, s = data.size;
    const std::size_t in_plane = static_cast<std::size_t>(3 * w) * s * s;
    const bool adversarial = cfg.adversarial_weight > 0;

    std::vector<int> order = data.train;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        order = data.train;
        Rng rng(derive_seed(seed, 2000 + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        double l1_sum = 0.0, adv_sum = 0.0, d_sum = 0.0;
        int batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const int b = static_cast<int>(std::min(order.size() - begin, static_cast<std::size_t>(cfg.batch_size)));
            nn::Tensor x({b, 3 * w, s, s}), y({b, 3, s, s});
            for (int k = 0; k < b; ++k) {
                const int idx = order[begin + static_cast<std::size_t>(k)];
                const nn::Tensor xi = window_input(data, idx, w);
                std::copy(xi.data(), xi.data() + in_plane, x.data() + static_cast<std::size_t>(k) * in_plane);
                copy_bytes(data.front.data() + static_cast<std::size_t>(idx) * data.plane(), data.plane(),
                           y.data() + static_cast<std::size_t>(k) * data.plane());
            }

            nn::ForwardCache<float> g_cache;
            const nn::Tensor fake = nn::forward(gan.g_state, gan.g_spec, x, true, &g_cache);

            double d_loss = 0.0;
            if (adversarial) {
                nn::ForwardCache<float> real_cache, fake_cache;
                const nn::Tensor d_real = nn::forward(gan.d_state, gan.d_spec, concat_channels(x, y), true, &real_cache);
                const nn::Tensor d_fake = nn::forward(gan.d_state, gan.d_spec, concat_channels(x, fake), true, &fake_cache);
                d_loss = loss_adv(d_real, d_fake).discriminator;
                nn::Tensor gr(d_real.shape()), gf(d_fake.shape());
                const double nr = static_cast<double>(d_real.size()), nfk = static_cast<double>(d_fake.size());
                for (std::size_t i = 0; i < d_real.size(); ++i) {
                    const double p = clamp_probability(d_real[i]);
                    gr[i] = p == d_real[i] ? static_cast<float>(-1.0 / (p * nr)) : 0.0f;
                }
                for (std::size_t i = 0; i < d_fake.size(); ++i) {
                    const double p = clamp_probability(d_fake[i]);
                    gf[i] = p == d_fake[i] ? static_cast<float>(1.0 / ((1.0 - p) * nfk)) : 0.0f;
                }
                auto d_grads = nn::backward(gan.d_state, gan.d_spec, real_cache, gr);
                nn::accumulate(d_grads.weights, nn::backward(gan.d_state, gan.d_spec, fake_cache, gf).weights);
                nn::adam_step(gan.d_state, d_grads.weights, cfg.discriminator_adam);
            }

            const GeneratorObjective<float> obj =
                generator_loss(gan.d_state, gan.d_spec, x, fake, y, cfg.lambda, cfg.adversarial_weight);
            const double parts = cfg.adversarial_weight * obj.adversarial + cfg.lambda * obj.l1;
            if (std::abs(obj.total - parts) > 1e-12 * std::max(1.0, std::abs(obj.total))) {
                throw std::logic_error("generator loss " + std::to_string(obj.total) +
                                       " differs from adversarial + lambda * L1 = " + std::to_string(parts));
            }
            if (!std::isfinite(obj.total) || !std::isfinite(d_loss)) {
                throw NumericError("exp2vreal loss became non-finite at epoch " + std::to_string(epoch));
            }
            const auto g_grads = nn::backward(gan.g_state, gan.g_spec, g_cache, obj.grad_generated);
            nn::adam_step(gan.g_state, g_grads.weights, cfg.generator_adam);

            l1_sum += obj.l1;
            adv_sum += adversarial ? obj.adversarial : 0.0;
            d_sum += d_loss;
            ++batches;
        }
        res.curve.push_back({epoch, l1_sum / batches, adv_sum / batches, d_sum / batches});
        if (on_epoch) {
            on_epoch(res.curve.back());
        }
    }
    return res;
}

render::Image tensor_to_image(const nn::Tensor& t, std::size_t offset)
{
    const int h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    render::Image img(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.set(x, y, c, t[offset + static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x]);
            }
        }
    }
    return img;
}

void image_to_planes(const render::Image& img, float* out)
{
    const std::size_t plane = img.pixel_count();
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                out[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * img.width() + x] =
                    static_cast<float>(img.at(x, y, c));
            }
        }
    }
}

render::Image translate_tensor(const Gan& gan, const nn::Tensor& input)
{
    if (input.rank() != 4 || input.dim(0) != 1) {
        throw std::invalid_argument("translation takes one window at a time");
    }
    return tensor_to_image(nn::forward(gan.g_state, gan.g_spec, input, false));
}

render::Image translate(const Gan& gan, const std::vector<render::Image>& albedo_window)
{
    const int w = gan.cfg.window, s = gan.cfg.image_size();
    if (static_cast<int>(albedo_window.size()) != w) {
        throw std::invalid_argument("translation window holds " + std::to_string(albedo_window.size()) +
                                    " frames, the generator expects " + std::to_string(w));
    }
    nn::Tensor x({1, 3 * w, s, s});
    const std::size_t plane = 3 * static_cast<std::size_t>(s) * s;
    for (std::size_t k = 0; k < albedo_window.size(); ++k) {
        const auto& img = albedo_window[k];
        if (img.width() != s || img.height() != s) {
            throw std::invalid_argument("albedo frame of " + std::to_string(img.width()) + "x" +
                                        std::to_string(img.height()) + " does not match generator size " +
                                        std::to_string(s));
        }
        image_to_planes(img, x.data() + k * plane);
    }
    return translate_tensor(gan, x);
}

std::pair<Vector3d, Vector3d> select_pose(const PoseSelection& sel, int frame_idx)
{
    if (sel.poses.empty()) {
        throw std::invalid_argument("pose selection needs at least one pose");
    }
    if (sel.loop_period < 1) {
        throw std::invalid_argument("pose loop period must be positive");
    }
    if (sel.mode == PoseMode::fixed) {
        return sel.poses.front();
    }
    const int n = static_cast<int>(sel.poses.size());
    const int step = std::max(frame_idx, 0) / sel.loop_period;
    int idx = step % n;
    if (sel.ping_pong && n > 1) {
        const int cycle = 2 * (n - 1);
        const int p = step % cycle;
        idx = p < n ? p : cycle - p;
    }
    return sel.poses[static_cast<std::size_t>(idx)];
}

model::ParamVector drive_params(const model::ParamVector& base, const Eigen::VectorXd& delta,
                                const std::pair<Vector3d, Vector3d>& pose)
{
    if (delta.size() != base.delta.size()) {
        throw std::invalid_argument("expression vector of length " + std::to_string(delta.size()) +
                                    " does not match the model's " + std::to_string(base.delta.size()));
    }
    model::ParamVector p = base;
    p.delta = delta;
    p.R = pose.first;
    p.T = pose.second;
    return p;
}

void write_gan_curve_csv(const std::vector<GanCurveRow>& curve, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot write " + path.string());
    }
    os << "epoch,l1,g_adv,d_loss\n";
    os.precision(9);
    for (const auto& r : curve) {
        os << r.epoch << ',' << r.l1 << ',' << r.g_adv << ',' << r.d_loss << '\n';
    }
}

void save_gan(const Gan& gan, const std::filesystem::path& dir, const std::string& prefix)
{
    std::filesystem::create_directories(dir);
    write_network(gan.g_spec, gan.g_state, gan.cfg, dir / (prefix + "_generator"));
    write_network(gan.d_spec, gan.d_state, gan.cfg, dir / (prefix + "_discriminator"));
}

Gan load_gan(const std::filesystem::path& dir, const std::string& prefix)
{
    for (const std::string part : {"_generator", "_discriminator"}) {
        for (const char* ext : {".egfw", ".json"}) {
            const auto p = dir / (prefix + part + ext);
            if (!std::filesystem::exists(p)) {
                throw MissingArtifactError("missing trained translator file " + p.string());
            }
        }
    }
    const auto read_json = [](const std::filesystem::path& p) {
        std::ifstream is(p);
        return nlohmann::json::parse(is);
    };
    const nlohmann::json gj = read_json(dir / (prefix + "_generator.json"));
    const nlohmann::json dj = read_json(dir / (prefix + "_discriminator.json"));
    Gan g;
    g.cfg = gan_config_from_json(gj.at("config"));
    g.g_spec = nn::spec_from_json(gj.at("spec"));
    g.d_spec = nn::spec_from_json(dj.at("spec"));
    g.g_state = nn::load_weights(g.g_spec, dir / (prefix + "_generator.egfw"));
    g.d_state = nn::load_weights(g.d_spec, dir / (prefix + "_discriminator.egfw"));
    return g;
}

} // namespace egoface::exp2vreal
