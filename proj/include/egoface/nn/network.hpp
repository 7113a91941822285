#pragma once

#include "egoface/nn/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace egoface::nn {

enum class LayerKind
{
    conv,
    conv_transpose,
    dense,
    leaky_relu,
    relu,
    tanh,
    sigmoid,
    instance_norm,
    dropout,
    concat,      // channel-concatenates the running activation with an earlier one
    scale_shift, // fixed affine map y = scale * x + shift
};

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec
{
    LayerKind kind = LayerKind::relu;
    std::string name;
    int out_channels = 0; // conv, conv_transpose, dense
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    double slope = 0.2;  // leaky_relu
    double rate = 0.0;   // dropout
    int source = -1;     // concat: layer index whose output is appended; -1 is the network input
    double scale = 1.0;  // scale_shift
    double shift = 0.0;

    static LayerSpec conv(int out_channels, int kernel, int stride, int padding, std::string name = {});
    static LayerSpec conv_transpose(int out_channels, int kernel, int stride, int padding, std::string name = {});
    static LayerSpec dense(int out_features, std::string name = {});
    static LayerSpec leaky_relu(double slope = 0.2);
    static LayerSpec relu();
    static LayerSpec tanh();
    static LayerSpec sigmoid();
    static LayerSpec instance_norm();
    static LayerSpec dropout(double rate);
    static LayerSpec concat(int source, std::string name = {});
    static LayerSpec scale_shift(double scale, double shift);

    bool has_weights() const
    {
        return kind == LayerKind::conv || kind == LayerKind::conv_transpose || kind == LayerKind::dense ||
               kind == LayerKind::instance_norm;
    }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer graph: a chain with optional concat edges back to earlier activations.
struct NetworkSpec
{
    Shape input_shape;  // per sample, no batch dimension
    Shape output_shape; // per sample
    std::vector<LayerSpec> layers;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

class ShapeError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Per-sample activation shapes: element 0 is the input, element i + 1 the output of layer i.
/// Throws ShapeError naming the offending layer.
std::vector<Shape> infer_shapes(const NetworkSpec& spec);

/// Weight tensor shapes for one layer given its input shape.
std::vector<Shape> weight_shapes(const LayerSpec& layer, const Shape& input_shape);

template <typename T>
struct BasicNetworkState
{
    std::vector<std::vector<BasicTensor<T>>> weights; // indexed by layer; empty for weightless layers
    std::vector<std::vector<BasicTensor<T>>> adam_m;
    std::vector<std::vector<BasicTensor<T>>> adam_v;
    std::int64_t step_count = 0;

    std::size_t parameter_count() const;

    template <typename U>
    BasicNetworkState<U> cast() const;

    friend bool operator==(const BasicNetworkState&, const BasicNetworkState&) = default;
};

using NetworkState = BasicNetworkState<float>;
using NetworkStateD = BasicNetworkState<double>;

/// Glorot-uniform conv/dense weights, zero biases, unit normalization scale.
/// Deterministic in (spec, seed).
template <typename T>
BasicNetworkState<T> build_network(const NetworkSpec& spec, std::uint64_t seed);

template <typename T>
struct ForwardCache
{
    std::vector<BasicTensor<T>> activations; // batched, size layers + 1
    std::vector<BasicTensor<T>> aux;         // per layer: dropout masks, normalized values
    std::vector<BasicTensor<T>> aux2;        // per layer: inverse std of instance normalization
    bool retained = false;
};

/// Runs the network on a batch [N, input_shape...]. Dropout is active only when
/// training; masks derive from dropout_seed. Pass a cache to enable backward().
template <typename T>
BasicTensor<T> forward(const BasicNetworkState<T>& state, const NetworkSpec& spec, const BasicTensor<T>& input,
                       bool training, std::type_identity_t<ForwardCache<T>>* cache = nullptr,
                       std::uint64_t dropout_seed = 0);

template <typename T>
struct Gradients
{
    std::vector<std::vector<BasicTensor<T>>> weights;
    BasicTensor<T> input;
};

template <typename T>
Gradients<T> backward(const BasicNetworkState<T>& state, const NetworkSpec& spec, const ForwardCache<T>& cache,
                      const BasicTensor<T>& upstream);

/// Adds b into a (shape-congruent gradient lists).
template <typename T>
void accumulate(std::vector<std::vector<BasicTensor<T>>>& a, const std::vector<std::vector<BasicTensor<T>>>& b);

} // namespace egoface::nn
