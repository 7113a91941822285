#pragma once

#include "egoface/nn/network.hpp"

namespace egoface::nn {

struct AdamConfig
{
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One bias-corrected ADAM update in place; increments step_count by one.
/// Throws NumericError on a non-finite gradient and ShapeError on a layout mismatch.
template <typename T>
void adam_step(BasicNetworkState<T>& state, const std::vector<std::vector<BasicTensor<T>>>& gradients,
               const AdamConfig& cfg);

} // namespace egoface::nn
