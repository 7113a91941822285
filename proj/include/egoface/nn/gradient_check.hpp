#pragma once

#include "egoface/nn/loss.hpp"
#include "egoface/nn/network.hpp"

#include <functional>

namespace egoface::nn {

using LossFn = std::function<LossResult<double>(const TensorD& output)>;

struct GradientCheckOptions
{
    double step = 1e-5;
    std::size_t max_samples = 200; // sampled weights across all layers; all weights if fewer exist
    bool include_input = true;     // also check a sample of input coordinates
    std::uint64_t seed = 0;
};

struct GradientCheckReport
{
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::string worst; // "layer 2 tensor 0 index 17" or "input index 3"
};

/// Compares backward() against central differences of the loss,
/// rel = |a - n| / max(1e-12, |a| + |n|), reporting the maximum.
GradientCheckReport gradient_check(const NetworkSpec& spec, const NetworkStateD& state, const TensorD& input,
                                   const LossFn& loss, const GradientCheckOptions& options = {});

} // namespace egoface::nn
