#pragma once

#include <cstddef>
#include <vector>

namespace gradselect {

// Dense row-major tensor of 64-bit floats. Shape dims are positive and
// product(shape) == data.size() for a valid tensor.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0);
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    std::size_t numel() const { return data.size(); }
    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

// True when every element is finite (no NaN/inf).
bool all_finite(const double* v, std::size_t n);
bool all_finite(const Tensor& t);

}  // namespace gradselect
