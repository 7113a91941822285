#pragma once

#include "egoface/nn/tensor.hpp"

namespace egoface::nn {

/// Loss value plus its gradient with respect to the prediction.
template <typename T>
struct LossResult
{
    double value = 0.0;
    BasicTensor<T> gradient;
};

/// Mean of squared differences over all elements.
template <typename T>
LossResult<T> mse_loss(const BasicTensor<T>& prediction, const BasicTensor<T>& target);

/// Mean absolute difference; the subgradient at zero residual is zero.
template <typename T>
LossResult<T> l1_loss(const BasicTensor<T>& prediction, const BasicTensor<T>& target);

/// Mean binary cross-entropy of probabilities against labels in [0, 1].
/// Probabilities are clamped to [1e-7, 1 - 1e-7] before the logarithm.
template <typename T>
LossResult<T> bce_loss(const BasicTensor<T>& probability, const BasicTensor<T>& label);

inline constexpr double bce_clamp = 1e-7;

} // namespace egoface::nn
