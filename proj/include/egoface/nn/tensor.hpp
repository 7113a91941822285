#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace egoface::nn {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

std::string shape_string(const Shape& shape);

/**
 * Dense row-major tensor. Value semantics; product(shape) == data.size() always.
 *
 * Network activations carry a leading batch dimension: [N, C, H, W] for image
 * planes, [N, D] for feature vectors.
 */
template <typename T>
class BasicTensor
{
public:
    using value_type = T;
    /// Over-aligned so that kernel results do not depend on where the heap places the data.
    using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape))
    {
        check_dims();
        data_.assign(shape_size(shape_), fill);
    }

    BasicTensor(Shape shape, const std::vector<T>& data)
        : BasicTensor(std::move(shape), Storage(data.begin(), data.end()))
    {
    }

    BasicTensor(Shape shape, std::initializer_list<T> data)
        : BasicTensor(std::move(shape), Storage(data.begin(), data.end()))
    {
    }

    BasicTensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data))
    {
        check_dims();
        if (data_.size() != shape_size(shape_)) {
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_string(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const
    {
        for (const T v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    /// Same data, new shape of equal element count.
    BasicTensor reshaped(Shape shape) const
    {
        return BasicTensor(std::move(shape), data_);
    }

    template <typename U>
    BasicTensor<U> cast() const
    {
        typename BasicTensor<U>::Storage out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out[i] = static_cast<U>(data_[i]);
        }
        return BasicTensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b)
    {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_dims() const
    {
        for (const int d : shape_) {
            if (d <= 0) {
                throw std::invalid_argument("tensor dimensions must be positive, got " + shape_string(shape_));
            }
        }
    }

    Shape shape_;
    Storage data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Prepends a batch dimension.
inline Shape batched(int n, const Shape& sample_shape)
{
    Shape s;
    s.reserve(sample_shape.size() + 1);
    s.push_back(n);
    s.insert(s.end(), sample_shape.begin(), sample_shape.end());
    return s;
}

} // namespace egoface::nn
