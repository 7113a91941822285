#include "egoface/nn/network.hpp"

#include "egoface/common/error.hpp"
#include "egoface/common/rng.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace egoface::nn {

std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

constexpr double instance_norm_epsilon = 1e-5;

const std::pair<LayerKind, const char*> kind_names[] = {
    {LayerKind::conv, "conv"},
    {LayerKind::conv_transpose, "conv_transpose"},
    {LayerKind::dense, "dense"},
    {LayerKind::leaky_relu, "leaky_relu"},
    {LayerKind::relu, "relu"},
    {LayerKind::tanh, "tanh"},
    {LayerKind::sigmoid, "sigmoid"},
    {LayerKind::instance_norm, "instance_norm"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::concat, "concat"},
    {LayerKind::scale_shift, "scale_shift"},
};

std::string describe(const NetworkSpec& spec, std::size_t i)
{
    std::string s = "layer " + std::to_string(i);
    if (!spec.layers[i].name.empty()) {
        s += " (" + spec.layers[i].name + ")";
    }
    return s + " [" + to_string(spec.layers[i].kind) + "]";
}

} // namespace

std::string to_string(LayerKind kind)
{
    for (const auto& [k, name] : kind_names) {
        if (k == kind) {
            return name;
        }
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name)
{
    for (const auto& [k, n] : kind_names) {
        if (name == n) {
            return k;
        }
    }
    throw std::invalid_argument("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv(int out_channels, int kernel, int stride, int padding, std::string name)
{
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    l.name = std::move(name);
    return l;
}

LayerSpec LayerSpec::conv_transpose(int out_channels, int kernel, int stride, int padding, std::string name)
{
    LayerSpec l = conv(out_channels, kernel, stride, padding, std::move(name));
    l.kind = LayerKind::conv_transpose;
    return l;
}

LayerSpec LayerSpec::dense(int out_features, std::string name)
{
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.out_channels = out_features;
    l.name = std::move(name);
    return l;
}

LayerSpec LayerSpec::leaky_relu(double slope)
{
    LayerSpec l;
    l.kind = LayerKind::leaky_relu;
    l.slope = slope;
    return l;
}

LayerSpec LayerSpec::relu()
{
    LayerSpec l;
    l.kind = LayerKind::relu;
    return l;
}

LayerSpec LayerSpec::tanh()
{
    LayerSpec l;
    l.kind = LayerKind::tanh;
    return l;
}

LayerSpec LayerSpec::sigmoid()
{
    LayerSpec l;
    l.kind = LayerKind::sigmoid;
    return l;
}

LayerSpec LayerSpec::instance_norm()
{
    LayerSpec l;
    l.kind = LayerKind::instance_norm;
    return l;
}

LayerSpec LayerSpec::dropout(double rate)
{
    LayerSpec l;
    l.kind = LayerKind::dropout;
    l.rate = rate;
    return l;
}

LayerSpec LayerSpec::concat(int source, std::string name)
{
    LayerSpec l;
    l.kind = LayerKind::concat;
    l.source = source;
    l.name = std::move(name);
    return l;
}

LayerSpec LayerSpec::scale_shift(double scale, double shift)
{
    LayerSpec l;
    l.kind = LayerKind::scale_shift;
    l.scale = scale;
    l.shift = shift;
    return l;
}

std::vector<Shape> infer_shapes(const NetworkSpec& spec)
{
    if (spec.input_shape.empty() || std::any_of(spec.input_shape.begin(), spec.input_shape.end(),
                                                [](int d) { return d <= 0; })) {
        throw ShapeError("network input shape " + shape_string(spec.input_shape) + " is invalid");
    }
    std::vector<Shape> shapes{spec.input_shape};
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const Shape& in = shapes.back();
        auto fail = [&](const std::string& why) {
            throw ShapeError(describe(spec, i) + ": " + why + " (input " + shape_string(in) + ")");
        };
        Shape out;
        switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::conv_transpose: {
            if (in.size() != 3) {
                fail("expects a [C,H,W] input");
            }
            if (l.out_channels <= 0 || l.kernel <= 0 || l.stride <= 0 || l.padding < 0) {
                fail("invalid channel/kernel/stride/padding");
            }
            int h, w;
            if (l.kind == LayerKind::conv) {
                h = (in[1] + 2 * l.padding - l.kernel) / l.stride + 1;
                w = (in[2] + 2 * l.padding - l.kernel) / l.stride + 1;
                if (in[1] + 2 * l.padding < l.kernel || in[2] + 2 * l.padding < l.kernel) {
                    fail("kernel larger than padded input");
                }
            } else {
                h = (in[1] - 1) * l.stride - 2 * l.padding + l.kernel;
                w = (in[2] - 1) * l.stride - 2 * l.padding + l.kernel;
            }
            if (h <= 0 || w <= 0) {
                fail("output would be empty");
            }
            out = {l.out_channels, h, w};
            break;
        }
        case LayerKind::dense:
            if (l.out_channels <= 0) {
                fail("dense width must be positive");
            }
            out = {l.out_channels};
            break;
        case LayerKind::instance_norm:
            if (in.size() != 3) {
                fail("instance normalization expects a [C,H,W] input");
            }
            out = in;
            break;
        case LayerKind::dropout:
            if (!(l.rate >= 0.0 && l.rate < 1.0)) {
                fail("dropout rate must lie in [0, 1)");
            }
            out = in;
            break;
        case LayerKind::concat: {
            if (l.source < -1 || l.source >= static_cast<int>(i)) {
                fail("skip source " + std::to_string(l.source) + " does not reference an earlier layer");
            }
            const Shape& src = shapes[static_cast<std::size_t>(l.source + 1)];
            if (src.size() != in.size()) {
                fail("skip source rank differs");
            }
            if (in.size() == 3 && (src[1] != in[1] || src[2] != in[2])) {
                fail("skip source spatial shape " + shape_string(src) + " does not match");
            }
            if (in.size() != 3 && in.size() != 1) {
                fail("concat supports [C,H,W] or [D] activations");
            }
            out = in;
            out[0] += src[0];
            break;
        }
        case LayerKind::leaky_relu:
        case LayerKind::relu:
        case LayerKind::tanh:
        case LayerKind::sigmoid:
        case LayerKind::scale_shift:
            out = in;
            break;
        }
        shapes.push_back(out);
    }
    if (!spec.output_shape.empty() && shapes.back() != spec.output_shape) {
        throw ShapeError("network output " + shape_string(shapes.back()) + " does not match declared output " +
                         shape_string(spec.output_shape));
    }
    return shapes;
}

std::vector<Shape> weight_shapes(const LayerSpec& layer, const Shape& in)
{
    switch (layer.kind) {
    case LayerKind::conv:
        return {{layer.out_channels, in[0], layer.kernel, layer.kernel}, {layer.out_channels}};
    case LayerKind::conv_transpose:
        return {{in[0], layer.out_channels, layer.kernel, layer.kernel}, {layer.out_channels}};
    case LayerKind::dense:
        return {{layer.out_channels, static_cast<int>(shape_size(in))}, {layer.out_channels}};
    case LayerKind::instance_norm:
        return {{in[0]}, {in[0]}};
    default:
        return {};
    }
}

template <typename T>
std::size_t BasicNetworkState<T>::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& layer : weights) {
        for (const auto& w : layer) {
            n += w.size();
        }
    }
    return n;
}

template <typename T>
template <typename U>
BasicNetworkState<U> BasicNetworkState<T>::cast() const
{
    auto conv = [](const std::vector<std::vector<BasicTensor<T>>>& src) {
        std::vector<std::vector<BasicTensor<U>>> dst(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            for (const auto& t : src[i]) {
                dst[i].push_back(t.template cast<U>());
            }
        }
        return dst;
    };
    BasicNetworkState<U> out;
    out.weights = conv(weights);
    out.adam_m = conv(adam_m);
    out.adam_v = conv(adam_v);
    out.step_count = step_count;
    return out;
}

template <typename T>
BasicNetworkState<T> build_network(const NetworkSpec& spec, std::uint64_t seed)
{
    const auto shapes = infer_shapes(spec);
    Rng rng(seed);
    BasicNetworkState<T> state;
    const std::size_t n = spec.layers.size();
    state.weights.resize(n);
    state.adam_m.resize(n);
    state.adam_v.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const LayerSpec& l = spec.layers[i];
        const auto ws = weight_shapes(l, shapes[i]);
        for (std::size_t k = 0; k < ws.size(); ++k) {
            BasicTensor<T> w(ws[k]);
            if (l.kind == LayerKind::instance_norm) {
                w.fill(k == 0 ? T(1) : T(0));
            } else if (k == 0) {
                double fan_in = 0, fan_out = 0;
                if (l.kind == LayerKind::dense) {
                    fan_in = ws[0][1];
                    fan_out = ws[0][0];
                } else {
                    const double taps = static_cast<double>(l.kernel) * l.kernel;
                    const double cin = shapes[i][0];
                    fan_in = cin * taps;
                    fan_out = l.out_channels * taps;
                }
                const double bound = std::sqrt(6.0 / (fan_in + fan_out));
                for (auto& v : w.values()) {
                    v = static_cast<T>(rng.uniform(-bound, bound));
                }
            }
            state.adam_m[i].emplace_back(ws[k]);
            state.adam_v[i].emplace_back(ws[k]);
            state.weights[i].push_back(std::move(w));
        }
    }
    return state;
}

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

struct Window
{
    int channels;
    int image_h, image_w; // the dense image being gathered from / scattered into
    int grid_h, grid_w;   // sliding positions
    int kernel, stride, padding;
};

// colsT(n*G + gy*grid_w + gx, (c*k + ky)*k + kx) = image[n, c, gy*s - p + ky, gx*s - p + kx]
template <typename T>
void im2col(const T* image, int batch, const Window& w, Mat<T>& cols)
{
    const int grid = w.grid_h * w.grid_w;
    cols.resize(static_cast<Eigen::Index>(batch) * grid, static_cast<Eigen::Index>(w.channels) * w.kernel * w.kernel);
    const std::size_t plane = static_cast<std::size_t>(w.image_h) * w.image_w;
    for (int c = 0; c < w.channels; ++c) {
        for (int ky = 0; ky < w.kernel; ++ky) {
            for (int kx = 0; kx < w.kernel; ++kx) {
                T* col = cols.data() + static_cast<std::size_t>(cols.rows()) * ((c * w.kernel + ky) * w.kernel + kx);
                for (int n = 0; n < batch; ++n) {
                    const T* src = image + (static_cast<std::size_t>(n) * w.channels + c) * plane;
                    for (int gy = 0; gy < w.grid_h; ++gy) {
                        const int iy = gy * w.stride - w.padding + ky;
                        T* dst = col + static_cast<std::size_t>(n) * grid + static_cast<std::size_t>(gy) * w.grid_w;
                        if (iy < 0 || iy >= w.image_h) {
                            std::fill(dst, dst + w.grid_w, T(0));
                            continue;
                        }
                        const T* row = src + static_cast<std::size_t>(iy) * w.image_w;
                        for (int gx = 0; gx < w.grid_w; ++gx) {
                            const int ix = gx * w.stride - w.padding + kx;
                            dst[gx] = (ix >= 0 && ix < w.image_w) ? row[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: image[n, c, iy, ix] += colsT(...)
template <typename T>
void col2im(const Mat<T>& cols, int batch, const Window& w, T* image)
{
    const int grid = w.grid_h * w.grid_w;
    const std::size_t plane = static_cast<std::size_t>(w.image_h) * w.image_w;
    for (int c = 0; c < w.channels; ++c) {
        for (int ky = 0; ky < w.kernel; ++ky) {
            for (int kx = 0; kx < w.kernel; ++kx) {
                const T* col =
                    cols.data() + static_cast<std::size_t>(cols.rows()) * ((c * w.kernel + ky) * w.kernel + kx);
                for (int n = 0; n < batch; ++n) {
                    T* dst = image + (static_cast<std::size_t>(n) * w.channels + c) * plane;
                    for (int gy = 0; gy < w.grid_h; ++gy) {
                        const int iy = gy * w.stride - w.padding + ky;
                        if (iy < 0 || iy >= w.image_h) {
                            continue;
                        }
                        const T* src = col + static_cast<std::size_t>(n) * grid + static_cast<std::size_t>(gy) * w.grid_w;
                        T* row = dst + static_cast<std::size_t>(iy) * w.image_w;
                        for (int gx = 0; gx < w.grid_w; ++gx) {
                            const int ix = gx * w.stride - w.padding + kx;
                            if (ix >= 0 && ix < w.image_w) {
                                row[ix] += src[gx];
                            }
                        }
                    }
                }
            }
        }
    }
}

Window conv_window(const LayerSpec& l, const Shape& in, const Shape& out)
{
    return Window{in[0], in[1], in[2], out[1], out[2], l.kernel, l.stride, l.padding};
}

// For a transposed conv the dense image is the output and the sliding grid is the input.
Window transpose_window(const LayerSpec& l, const Shape& in, const Shape& out)
{
    return Window{out[0], out[1], out[2], in[1], in[2], l.kernel, l.stride, l.padding};
}

} // namespace

template <typename T>
BasicTensor<T> forward(const BasicNetworkState<T>& state, const NetworkSpec& spec, const BasicTensor<T>& input,
                       bool training, std::type_identity_t<ForwardCache<T>>* cache, std::uint64_t dropout_seed)
{
    const auto shapes = infer_shapes(spec);
    if (input.rank() != static_cast<int>(spec.input_shape.size()) + 1 ||
        !std::equal(spec.input_shape.begin(), spec.input_shape.end(), input.shape().begin() + 1)) {
        throw ShapeError("network input " + shape_string(input.shape()) + " does not match expected [N]+" +
                         shape_string(spec.input_shape));
    }
    if (state.weights.size() != spec.layers.size()) {
        throw ShapeError("network state has " + std::to_string(state.weights.size()) + " layers, spec has " +
                         std::to_string(spec.layers.size()));
    }
    const int batch = input.dim(0);
    const std::size_t n_layers = spec.layers.size();

    std::vector<BasicTensor<T>> acts;
    acts.reserve(n_layers + 1);
    acts.push_back(input);
    std::vector<BasicTensor<T>> aux(n_layers), aux2(n_layers);

    for (std::size_t i = 0; i < n_layers; ++i) {
        const LayerSpec& l = spec.layers[i];
        const Shape& in_shape = shapes[i];
        const Shape& out_shape = shapes[i + 1];
        const BasicTensor<T>& x = acts[i];
        BasicTensor<T> y(batched(batch, out_shape));
        const auto& w = state.weights[i];

        switch (l.kind) {
        case LayerKind::conv: {
            const Window win = conv_window(l, in_shape, out_shape);
            const int grid = out_shape[1] * out_shape[2];
            const std::size_t in_size = shape_size(in_shape);
            const std::size_t out_size = shape_size(out_shape);
            const Eigen::Index ck = static_cast<Eigen::Index>(in_shape[0]) * l.kernel * l.kernel;
            const ConstMatMap<T> wm(w[0].data(), ck, l.out_channels);
            const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(w[1].data(), l.out_channels);
            Mat<T> cols;
            for (int n = 0; n < batch; ++n) {
                im2col(x.data() + n * in_size, 1, win, cols);
                MatMap<T> yn(y.data() + n * out_size, grid, l.out_channels);
                yn.noalias() = cols * wm;
                yn.rowwise() += bias;
            }
            break;
        }
        case LayerKind::conv_transpose: {
            const Window win = transpose_window(l, in_shape, out_shape);
            const int grid = in_shape[1] * in_shape[2];
            const std::size_t in_size = shape_size(in_shape);
            const std::size_t out_size = shape_size(out_shape);
            const int mk = l.out_channels * l.kernel * l.kernel;
            const ConstMatMap<T> wm(w[0].data(), mk, in_shape[0]);
            const std::size_t plane = static_cast<std::size_t>(out_shape[1]) * out_shape[2];
            Mat<T> cols;
            for (int n = 0; n < batch; ++n) {
                const ConstMatMap<T> xn(x.data() + n * in_size, grid, in_shape[0]);
                cols.noalias() = xn * wm.transpose();
                T* yn = y.data() + n * out_size;
                col2im(cols, 1, win, yn);
                for (int o = 0; o < l.out_channels; ++o) {
                    T* p = yn + static_cast<std::size_t>(o) * plane;
                    const T b = w[1][static_cast<std::size_t>(o)];
                    for (std::size_t q = 0; q < plane; ++q) {
                        p[q] += b;
                    }
                }
            }
            break;
        }
        case LayerKind::dense: {
            const int in_f = static_cast<int>(shape_size(in_shape));
            const ConstMatMap<T> xm(x.data(), in_f, batch);
            const ConstMatMap<T> wm(w[0].data(), in_f, l.out_channels);
            MatMap<T> ym(y.data(), l.out_channels, batch);
            ym.noalias() = wm.transpose() * xm;
            for (int n = 0; n < batch; ++n) {
                for (int o = 0; o < l.out_channels; ++o) {
                    ym(o, n) += w[1][static_cast<std::size_t>(o)];
                }
            }
            break;
        }
        case LayerKind::leaky_relu: {
            const T slope = static_cast<T>(l.slope);
            for (std::size_t k = 0; k < x.size(); ++k) {
                y[k] = x[k] > T(0) ? x[k] : slope * x[k];
            }
            break;
        }
        case LayerKind::relu:
            for (std::size_t k = 0; k < x.size(); ++k) {
                y[k] = x[k] > T(0) ? x[k] : T(0);
            }
            break;
        case LayerKind::tanh:
            for (std::size_t k = 0; k < x.size(); ++k) {
                y[k] = std::tanh(x[k]);
            }
            break;
        case LayerKind::sigmoid:
            for (std::size_t k = 0; k < x.size(); ++k) {
                y[k] = T(1) / (T(1) + std::exp(-x[k]));
            }
            break;
        case LayerKind::instance_norm: {
            const int channels = in_shape[0];
            const std::size_t plane = static_cast<std::size_t>(in_shape[1]) * in_shape[2];
            BasicTensor<T> xhat(x.shape());
            BasicTensor<T> inv({batch, channels});
            for (int n = 0; n < batch; ++n) {
                for (int c = 0; c < channels; ++c) {
                    const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
                    double mean = 0;
                    for (std::size_t q = 0; q < plane; ++q) {
                        mean += x[off + q];
                    }
                    mean /= static_cast<double>(plane);
                    double var = 0;
                    for (std::size_t q = 0; q < plane; ++q) {
                        const double d = x[off + q] - mean;
                        var += d * d;
                    }
                    var /= static_cast<double>(plane);
                    const T is = static_cast<T>(1.0 / std::sqrt(var + instance_norm_epsilon));
                    inv[static_cast<std::size_t>(n) * channels + c] = is;
                    const T g = w[0][static_cast<std::size_t>(c)];
                    const T b = w[1][static_cast<std::size_t>(c)];
                    const T m = static_cast<T>(mean);
                    for (std::size_t q = 0; q < plane; ++q) {
                        const T h = (x[off + q] - m) * is;
                        xhat[off + q] = h;
                        y[off + q] = g * h + b;
                    }
                }
            }
            if (cache) {
                aux[i] = std::move(xhat);
                aux2[i] = std::move(inv);
            }
            break;
        }
        case LayerKind::dropout: {
            if (!training || l.rate == 0.0) {
                y = x;
                break;
            }
            Rng rng(derive_seed(dropout_seed, i));
            const double keep = 1.0 - l.rate;
            const T scale = static_cast<T>(1.0 / keep);
            BasicTensor<T> mask(x.shape());
            for (std::size_t k = 0; k < x.size(); ++k) {
                mask[k] = rng.uniform() < keep ? scale : T(0);
                y[k] = x[k] * mask[k];
            }
            if (cache) {
                aux[i] = std::move(mask);
            }
            break;
        }
        case LayerKind::concat: {
            const BasicTensor<T>& src = acts[static_cast<std::size_t>(l.source + 1)];
            const std::size_t a = shape_size(in_shape);
            const std::size_t b = shape_size(shapes[static_cast<std::size_t>(l.source + 1)]);
            for (int n = 0; n < batch; ++n) {
                T* dst = y.data() + static_cast<std::size_t>(n) * (a + b);
                std::copy_n(x.data() + static_cast<std::size_t>(n) * a, a, dst);
                std::copy_n(src.data() + static_cast<std::size_t>(n) * b, b, dst + a);
            }
            break;
        }
        case LayerKind::scale_shift: {
            const T s = static_cast<T>(l.scale);
            const T t = static_cast<T>(l.shift);
            for (std::size_t k = 0; k < x.size(); ++k) {
                y[k] = s * x[k] + t;
            }
            break;
        }
        }
        if (!y.all_finite()) {
            throw NumericError("non-finite activation after " + describe(spec, i));
        }
        acts.push_back(std::move(y));
    }

    BasicTensor<T> output = acts.back();
    if (cache) {
        cache->activations = std::move(acts);
        cache->aux = std::move(aux);
        cache->aux2 = std::move(aux2);
        cache->retained = true;
    }
    return output;
}

template <typename T>
Gradients<T> backward(const BasicNetworkState<T>& state, const NetworkSpec& spec, const ForwardCache<T>& cache,
                      const BasicTensor<T>& upstream)
{
    const std::size_t n_layers = spec.layers.size();
    if (!cache.retained || cache.activations.size() != n_layers + 1) {
        throw std::logic_error("backward requires a forward cache (call forward with a cache first)");
    }
    if (upstream.shape() != cache.activations.back().shape()) {
        throw ShapeError("upstream gradient " + shape_string(upstream.shape()) + " does not match output " +
                         shape_string(cache.activations.back().shape()));
    }
    const auto shapes = infer_shapes(spec);
    const int batch = upstream.dim(0);

    Gradients<T> grads;
    grads.weights.resize(n_layers);
    for (std::size_t i = 0; i < n_layers; ++i) {
        for (const auto& w : state.weights[i]) {
            grads.weights[i].emplace_back(w.shape());
        }
    }

    std::vector<BasicTensor<T>> dact(n_layers + 1);
    dact[n_layers] = upstream;
    auto grad_slot = [&](std::size_t k) -> BasicTensor<T>& {
        if (dact[k].empty()) {
            dact[k] = BasicTensor<T>(cache.activations[k].shape());
        }
        return dact[k];
    };

    for (std::size_t ii = n_layers; ii-- > 0;) {
        const LayerSpec& l = spec.layers[ii];
        const Shape& in_shape = shapes[ii];
        const Shape& out_shape = shapes[ii + 1];
        const BasicTensor<T>& x = cache.activations[ii];
        const BasicTensor<T>& y = cache.activations[ii + 1];
        if (dact[ii + 1].empty()) {
            dact[ii + 1] = BasicTensor<T>(y.shape());
        }
        const BasicTensor<T>& dy = dact[ii + 1];
        BasicTensor<T>& dx = grad_slot(ii);
        const auto& w = state.weights[ii];
        auto& gw = grads.weights[ii];

        switch (l.kind) {
        case LayerKind::conv: {
            const Window win = conv_window(l, in_shape, out_shape);
            const int grid = out_shape[1] * out_shape[2];
            const std::size_t in_size = shape_size(in_shape);
            const std::size_t out_size = shape_size(out_shape);
            const Eigen::Index ck = static_cast<Eigen::Index>(in_shape[0]) * l.kernel * l.kernel;
            const ConstMatMap<T> wm(w[0].data(), ck, l.out_channels);
            MatMap<T> dw(gw[0].data(), ck, l.out_channels);
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(gw[1].data(), l.out_channels);
            Mat<T> cols, dcols;
            for (int n = 0; n < batch; ++n) {
                im2col(x.data() + n * in_size, 1, win, cols);
                const ConstMatMap<T> dyn(dy.data() + n * out_size, grid, l.out_channels);
                dw.noalias() += cols.transpose() * dyn;
                db += dyn.colwise().sum();
                dcols.noalias() = dyn * wm.transpose();
                col2im(dcols, 1, win, dx.data() + n * in_size);
            }
            break;
        }
        case LayerKind::conv_transpose: {
            const Window win = transpose_window(l, in_shape, out_shape);
            const int grid = in_shape[1] * in_shape[2];
            const std::size_t in_size = shape_size(in_shape);
            const std::size_t out_size = shape_size(out_shape);
            const int mk = l.out_channels * l.kernel * l.kernel;
            const ConstMatMap<T> wm(w[0].data(), mk, in_shape[0]);
            MatMap<T> dw(gw[0].data(), mk, in_shape[0]);
            const std::size_t plane = static_cast<std::size_t>(out_shape[1]) * out_shape[2];
            Mat<T> dcols;
            for (int n = 0; n < batch; ++n) {
                const T* dyn = dy.data() + n * out_size;
                im2col(dyn, 1, win, dcols);
                const ConstMatMap<T> xn(x.data() + n * in_size, grid, in_shape[0]);
                dw.noalias() += dcols.transpose() * xn;
                for (int o = 0; o < l.out_channels; ++o) {
                    const T* p = dyn + static_cast<std::size_t>(o) * plane;
                    T s = 0;
                    for (std::size_t q = 0; q < plane; ++q) {
                        s += p[q];
                    }
                    gw[1][static_cast<std::size_t>(o)] += s;
                }
                MatMap<T> dxn(dx.data() + n * in_size, grid, in_shape[0]);
                dxn.noalias() += dcols * wm;
            }
            break;
        }
        case LayerKind::dense: {
            const int in_f = static_cast<int>(shape_size(in_shape));
            const ConstMatMap<T> xm(x.data(), in_f, batch);
            const ConstMatMap<T> dym(dy.data(), l.out_channels, batch);
            const ConstMatMap<T> wm(w[0].data(), in_f, l.out_channels);
            MatMap<T> dw(gw[0].data(), in_f, l.out_channels);
            dw.noalias() += xm * dym.transpose();
            for (int o = 0; o < l.out_channels; ++o) {
                gw[1][static_cast<std::size_t>(o)] += dym.row(o).sum();
            }
            MatMap<T> dxm(dx.data(), in_f, batch);
            dxm.noalias() += wm * dym;
            break;
        }
        case LayerKind::leaky_relu: {
            const T slope = static_cast<T>(l.slope);
            for (std::size_t k = 0; k < x.size(); ++k) {
                dx[k] += x[k] > T(0) ? dy[k] : slope * dy[k];
            }
            break;
        }
        case LayerKind::relu:
            for (std::size_t k = 0; k < x.size(); ++k) {
                dx[k] += x[k] > T(0) ? dy[k] : T(0);
            }
            break;
        case LayerKind::tanh:
            for (std::size_t k = 0; k < x.size(); ++k) {
                dx[k] += dy[k] * (T(1) - y[k] * y[k]);
            }
            break;
        case LayerKind::sigmoid:
            for (std::size_t k = 0; k < x.size(); ++k) {
                dx[k] += dy[k] * y[k] * (T(1) - y[k]);
            }
            break;
        case LayerKind::instance_norm: {
            const int channels = in_shape[0];
            const std::size_t plane = static_cast<std::size_t>(in_shape[1]) * in_shape[2];
            const BasicTensor<T>& xhat = cache.aux[ii];
            const BasicTensor<T>& inv = cache.aux2[ii];
            const double m = static_cast<double>(plane);
            for (int n = 0; n < batch; ++n) {
                for (int c = 0; c < channels; ++c) {
                    const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
                    const T g = w[0][static_cast<std::size_t>(c)];
                    double sum_dy = 0, sum_dy_xhat = 0;
                    for (std::size_t q = 0; q < plane; ++q) {
                        sum_dy += dy[off + q];
                        sum_dy_xhat += static_cast<double>(dy[off + q]) * xhat[off + q];
                    }
                    gw[0][static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xhat);
                    gw[1][static_cast<std::size_t>(c)] += static_cast<T>(sum_dy);
                    // dxhat = g * dy; dx = inv / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                    const double is = inv[static_cast<std::size_t>(n) * channels + c];
                    const double s1 = g * sum_dy;
                    const double s2 = g * sum_dy_xhat;
                    for (std::size_t q = 0; q < plane; ++q) {
                        const double dxhat = static_cast<double>(g) * dy[off + q];
                        dx[off + q] += static_cast<T>(is / m * (m * dxhat - s1 - xhat[off + q] * s2));
                    }
                }
            }
            break;
        }
        case LayerKind::dropout: {
            if (cache.aux[ii].empty()) {
                for (std::size_t k = 0; k < x.size(); ++k) {
                    dx[k] += dy[k];
                }
            } else {
                const BasicTensor<T>& mask = cache.aux[ii];
                for (std::size_t k = 0; k < x.size(); ++k) {
                    dx[k] += dy[k] * mask[k];
                }
            }
            break;
        }
        case LayerKind::concat: {
            const std::size_t src_index = static_cast<std::size_t>(l.source + 1);
            const std::size_t a = shape_size(in_shape);
            const std::size_t b = shape_size(shapes[src_index]);
            BasicTensor<T>& dsrc = grad_slot(src_index);
            for (int n = 0; n < batch; ++n) {
                const T* src = dy.data() + static_cast<std::size_t>(n) * (a + b);
                T* d1 = dx.data() + static_cast<std::size_t>(n) * a;
                T* d2 = dsrc.data() + static_cast<std::size_t>(n) * b;
                for (std::size_t k = 0; k < a; ++k) {
                    d1[k] += src[k];
                }
                for (std::size_t k = 0; k < b; ++k) {
                    d2[k] += src[a + k];
                }
            }
            break;
        }
        case LayerKind::scale_shift: {
            const T s = static_cast<T>(l.scale);
            for (std::size_t k = 0; k < x.size(); ++k) {
                dx[k] += s * dy[k];
            }
            break;
        }
        }
        dact[ii + 1] = BasicTensor<T>();
    }
    grads.input = std::move(dact[0]);
    if (grads.input.empty()) {
        grads.input = BasicTensor<T>(cache.activations[0].shape());
    }
    return grads;
}

template <typename T>
void accumulate(std::vector<std::vector<BasicTensor<T>>>& a, const std::vector<std::vector<BasicTensor<T>>>& b)
{
    if (a.size() != b.size()) {
        throw ShapeError("gradient lists differ in layer count");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size()) {
            throw ShapeError("gradient lists differ at layer " + std::to_string(i));
        }
        for (std::size_t k = 0; k < a[i].size(); ++k) {
            if (a[i][k].shape() != b[i][k].shape()) {
                throw ShapeError("gradient shapes differ at layer " + std::to_string(i));
            }
            for (std::size_t q = 0; q < a[i][k].size(); ++q) {
                a[i][k][q] += b[i][k][q];
            }
        }
    }
}

#define EGOFACE_INSTANTIATE(T)                                                                                   \
    template struct BasicNetworkState<T>;                                                                        \
    template BasicNetworkState<T> build_network<T>(const NetworkSpec&, std::uint64_t);                           \
    template BasicTensor<T> forward<T>(const BasicNetworkState<T>&, const NetworkSpec&, const BasicTensor<T>&,   \
                                       bool, ForwardCache<T>*, std::uint64_t);                                   \
    template Gradients<T> backward<T>(const BasicNetworkState<T>&, const NetworkSpec&, const ForwardCache<T>&,  \
                                      const BasicTensor<T>&);                                                    \
    template void accumulate<T>(std::vector<std::vector<BasicTensor<T>>>&,                                       \
                                const std::vector<std::vector<BasicTensor<T>>>&);

EGOFACE_INSTANTIATE(float)
EGOFACE_INSTANTIATE(double)
#undef EGOFACE_INSTANTIATE

template BasicNetworkState<double> BasicNetworkState<float>::cast<double>() const;
template BasicNetworkState<float> BasicNetworkState<double>::cast<float>() const;
template BasicNetworkState<float> BasicNetworkState<float>::cast<float>() const;
template BasicNetworkState<double> BasicNetworkState<double>::cast<double>() const;

} // namespace egoface::nn
