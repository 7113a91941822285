#include "egoface/nn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace egoface::nn {

namespace {

template <typename T>
void check_same(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what)
{
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(what) + ": prediction " + shape_string(a.shape()) +
                                    " and target " + shape_string(b.shape()) + " differ");
    }
    if (a.empty()) {
        throw std::invalid_argument(std::string(what) + ": empty tensors");
    }
}

} // namespace

template <typename T>
LossResult<T> mse_loss(const BasicTensor<T>& prediction, const BasicTensor<T>& target)
{
    check_same(prediction, target, "mse_loss");
    LossResult<T> r{0.0, BasicTensor<T>(prediction.shape())};
    const double n = static_cast<double>(prediction.size());
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double d = static_cast<double>(prediction[i]) - target[i];
        r.value += d * d;
        r.gradient[i] = static_cast<T>(2.0 * d / n);
    }
    r.value /= n;
    return r;
}

template <typename T>
LossResult<T> l1_loss(const BasicTensor<T>& prediction, const BasicTensor<T>& target)
{
    check_same(prediction, target, "l1_loss");
    LossResult<T> r{0.0, BasicTensor<T>(prediction.shape())};
    const double n = static_cast<double>(prediction.size());
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double d = static_cast<double>(prediction[i]) - target[i];
        r.value += std::abs(d);
        r.gradient[i] = static_cast<T>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n);
    }
    r.value /= n;
    return r;
}

template <typename T>
LossResult<T> bce_loss(const BasicTensor<T>& probability, const BasicTensor<T>& label)
{
    check_same(probability, label, "bce_loss");
    LossResult<T> r{0.0, BasicTensor<T>(probability.shape())};
    const double n = static_cast<double>(probability.size());
    for (std::size_t i = 0; i < probability.size(); ++i) {
        const double p = std::clamp(static_cast<double>(probability[i]), bce_clamp, 1.0 - bce_clamp);
        const double y = label[i];
        r.value -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        r.gradient[i] = static_cast<T>((p - y) / (p * (1.0 - p)) / n);
    }
    r.value /= n;
    return r;
}

template LossResult<float> mse_loss(const Tensor&, const Tensor&);
template LossResult<double> mse_loss(const TensorD&, const TensorD&);
template LossResult<float> l1_loss(const Tensor&, const Tensor&);
template LossResult<double> l1_loss(const TensorD&, const TensorD&);
template LossResult<float> bce_loss(const Tensor&, const Tensor&);
template LossResult<double> bce_loss(const TensorD&, const TensorD&);

} // namespace egoface::nn
