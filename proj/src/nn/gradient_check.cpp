#include "egoface/nn/gradient_check.hpp"

#include "egoface/common/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace egoface::nn {

namespace {

double relative_error(double a, double n)
{
    return std::abs(a - n) / std::max(1e-12, std::abs(a) + std::abs(n));
}

std::vector<std::size_t> sample_indices(std::size_t total, std::size_t max_samples, Rng& rng)
{
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (total <= max_samples) {
        return idx;
    }
    for (std::size_t i = 0; i < max_samples; ++i) {
        std::swap(idx[i], idx[i + rng.below(total - i)]);
    }
    idx.resize(max_samples);
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace

GradientCheckReport gradient_check(const NetworkSpec& spec, const NetworkStateD& state, const TensorD& input,
                                   const LossFn& loss, const GradientCheckOptions& options)
{
    ForwardCache<double> cache;
    const TensorD out = forward(state, spec, input, false, &cache);
    const LossResult<double> base = loss(out);
    const Gradients<double> grads = backward(state, spec, cache, base.gradient);

    auto eval = [&](const NetworkStateD& s, const TensorD& x) { return loss(forward(s, spec, x, false)).value; };

    struct Slot
    {
        std::size_t layer, tensor, index;
    };
    std::vector<Slot> slots;
    for (std::size_t i = 0; i < state.weights.size(); ++i) {
        for (std::size_t k = 0; k < state.weights[i].size(); ++k) {
            for (std::size_t q = 0; q < state.weights[i][k].size(); ++q) {
                slots.push_back({i, k, q});
            }
        }
    }

    GradientCheckReport report;
    Rng rng(options.seed);
    const double h = options.step;
    NetworkStateD work = state;
    for (const std::size_t s : sample_indices(slots.size(), options.max_samples, rng)) {
        const Slot& slot = slots[s];
        double& w = work.weights[slot.layer][slot.tensor][slot.index];
        const double w0 = w;
        w = w0 + h;
        const double fp = eval(work, input);
        w = w0 - h;
        const double fm = eval(work, input);
        w = w0;
        const double numeric = (fp - fm) / (2 * h);
        const double analytic = grads.weights[slot.layer][slot.tensor][slot.index];
        const double err = relative_error(analytic, numeric);
        ++report.checked;
        if (err > report.max_relative_error || report.worst.empty()) {
            report.max_relative_error = std::max(report.max_relative_error, err);
            report.worst = "layer " + std::to_string(slot.layer) + " tensor " + std::to_string(slot.tensor) +
                           " index " + std::to_string(slot.index);
        }
    }

    if (options.include_input) {
        TensorD x = input;
        for (const std::size_t q : sample_indices(x.size(), options.max_samples, rng)) {
            const double x0 = x[q];
            x[q] = x0 + h;
            const double fp = eval(state, x);
            x[q] = x0 - h;
            const double fm = eval(state, x);
            x[q] = x0;
            const double err = relative_error(grads.input[q], (fp - fm) / (2 * h));
            ++report.checked;
            if (err > report.max_relative_error) {
                report.max_relative_error = err;
                report.worst = "input index " + std::to_string(q);
            }
        }
    }
    return report;
}

} // namespace egoface::nn
