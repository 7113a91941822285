#include "egoface/nn/adam.hpp"

#include "egoface/common/error.hpp"

#include <cmath>

namespace egoface::nn {

template <typename T>
void adam_step(BasicNetworkState<T>& state, const std::vector<std::vector<BasicTensor<T>>>& gradients,
               const AdamConfig& cfg)
{
    if (gradients.size() != state.weights.size()) {
        throw ShapeError("gradient list has " + std::to_string(gradients.size()) + " layers, state has " +
                         std::to_string(state.weights.size()));
    }
    for (std::size_t i = 0; i < gradients.size(); ++i) {
        if (gradients[i].size() != state.weights[i].size()) {
            throw ShapeError("gradient tensor count differs at layer " + std::to_string(i));
        }
        for (std::size_t k = 0; k < gradients[i].size(); ++k) {
            if (gradients[i][k].shape() != state.weights[i][k].shape()) {
                throw ShapeError("gradient shape " + shape_string(gradients[i][k].shape()) + " differs from weight " +
                                 shape_string(state.weights[i][k].shape()) + " at layer " + std::to_string(i));
            }
            if (!gradients[i][k].all_finite()) {
                throw NumericError("non-finite gradient at layer " + std::to_string(i));
            }
        }
    }

    const std::int64_t t = state.step_count + 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    for (std::size_t i = 0; i < gradients.size(); ++i) {
        for (std::size_t k = 0; k < gradients[i].size(); ++k) {
            auto& w = state.weights[i][k];
            auto& m = state.adam_m[i][k];
            auto& v = state.adam_v[i][k];
            const auto& g = gradients[i][k];
            for (std::size_t q = 0; q < w.size(); ++q) {
                m[q] = b1 * m[q] + (T(1) - b1) * g[q];
                v[q] = b2 * v[q] + (T(1) - b2) * g[q] * g[q];
                const double mhat = m[q] / c1;
                const double vhat = v[q] / c2;
                w[q] -= static_cast<T>(cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
            }
        }
    }
    state.step_count = t;
}

template void adam_step<float>(NetworkState&, const std::vector<std::vector<Tensor>>&, const AdamConfig&);
template void adam_step<double>(NetworkStateD&, const std::vector<std::vector<TensorD>>&, const AdamConfig&);

} // namespace egoface::nn
