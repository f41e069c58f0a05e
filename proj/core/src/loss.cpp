#include "gradselect/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gradselect {

double log_sum_exp(const double* logits, std::size_t n) {
    double m = logits[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, logits[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(logits[i] - m);
    return m + std::log(s);
}

void softmax(const double* logits, double* probs_out, std::size_t n) {
    double m = logits[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, logits[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        probs_out[i] = std::exp(logits[i] - m);
        s += probs_out[i];
    }
    for (std::size_t i = 0; i < n; ++i) probs_out[i] /= s;
}

double cross_entropy_one(const double* logits, std::size_t n, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= n) {
        throw std::invalid_argument("cross_entropy: label out of range");
    }
    return log_sum_exp(logits, n) - logits[label];
}

double cross_entropy_mean(const Tensor& logits, std::span<const int> labels) {
    if (logits.shape.size() != 2) {
        throw std::invalid_argument("cross_entropy: logits must be [n, classes]");
    }
    const std::size_t n = logits.shape[0];
    const std::size_t c = logits.shape[1];
    if (labels.size() != n) {
        throw std::invalid_argument("cross_entropy: batch sizes disagree");
    }
    if (n == 0) throw std::invalid_argument("cross_entropy: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += cross_entropy_one(logits.ptr() + i * c, c, labels[i]);
    }
    return total / static_cast<double>(n);
}

}  // namespace gradselect
