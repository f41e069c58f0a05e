#include "gradselect/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace gradselect {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> s, double fill)
    : shape(std::move(s)), data(shape_numel(shape), fill) {
    for (std::size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor: zero dimension");
    }
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("tensor: shape does not match data length");
    }
}

bool all_finite(const double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(v[i])) return false;
    }
    return true;
}

bool all_finite(const Tensor& t) { return all_finite(t.ptr(), t.numel()); }

}  // namespace gradselect
