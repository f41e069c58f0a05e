#pragma once

#include <span>

#include "gradselect/tensor.hpp"

namespace gradselect {

// Mean cross-entropy of softmax(logits) against integer labels.
// logits shape [n, class_count]. Labels must lie in [0, class_count).
double cross_entropy_mean(const Tensor& logits, std::span<const int> labels);

// Single-row helpers used by the backward passes and tests.
// Both subtract the row max before exponentiating.
double log_sum_exp(const double* logits, std::size_t n);
void softmax(const double* logits, double* probs_out, std::size_t n);

// Cross-entropy of one row; label checked against n.
double cross_entropy_one(const double* logits, std::size_t n, int label);

}  // namespace gradselect
