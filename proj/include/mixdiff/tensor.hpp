#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mixdiff/error.hpp"

namespace mixdiff {

// Dense row-major 4-D array of doubles. Episode tensors use the layout
// (batch, channel, length, width); denoiser activations use
// (batch, length, channel, width) so that each (batch, step) slice is a
// contiguous channel-by-width matrix.
class Tensor {
public:
    using Shape = std::array<std::size_t, 4>;

    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(shape), data_(shape[0] * shape[1] * shape[2] * shape[3], fill) {}

    const Shape& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    std::size_t offset(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
        return ((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
    }
    double& operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) noexcept {
        return data_[offset(a, b, c, d)];
    }
    double operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
        return data_[offset(a, b, c, d)];
    }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // Pointer to the contiguous block that starts at (a, b, 0, 0).
    double* slice(std::size_t a, std::size_t b) noexcept { return data_.data() + offset(a, b, 0, 0); }
    const double* slice(std::size_t a, std::size_t b) const noexcept {
        return data_.data() + offset(a, b, 0, 0);
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<double> data_;
};

inline std::string shape_string(const Tensor::Shape& s) {
    return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]) + "x" +
           std::to_string(s[3]);
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

}  // namespace mixdiff
