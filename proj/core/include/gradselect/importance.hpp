#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradselect/data_io.hpp"
#include "gradselect/model.hpp"

namespace gradselect {

enum class NormKind { L1, L2, Linf };

// Which parameter coordinates the norm runs over:
//   All              every parameter
//   BiasesOnly       (A) bias segments
//   WeightsOnly      (B) weight segments
//   LastLayerWeights (C) weight segments of the maximal layer index
enum class ParamSubset { All, BiasesOnly, WeightsOnly, LastLayerWeights };

struct NormConfig {
    NormKind norm = NormKind::L2;
    ParamSubset subset = ParamSubset::LastLayerWeights;
};

std::string to_string(NormKind k);
std::string to_string(ParamSubset s);
NormKind norm_kind_from_string(const std::string& s);
ParamSubset param_subset_from_string(const std::string& s);

// Per-example importance scores for one trained model. scores[i] is the
// gradient magnitude of training example i under norm_config.
struct ScoreTable {
    std::vector<double> scores;
    std::vector<int> labels;
    NormConfig norm_config;
    std::string model_id;

    std::size_t size() const { return scores.size(); }
    void validate() const;
};

// One sampled minibatch's triangle-inequality pair:
// lhs = ||sum_i grad_i||, rhs = sum_i ||grad_i||, with lhs <= rhs.
struct BoundPair {
    double lhs = 0.0;
    double rhs = 0.0;
    std::size_t batch_size = 0;
};

// Norm over the selected coordinates. Throws std::invalid_argument when the
// subset selects no coordinates (e.g. biases of a bias-free model).
double gradient_norm(const GradientVector& grad, const NormConfig& cfg);

// g_i for every example of train_set at the given (trained) model.
ScoreTable score_dataset(const Model& model, const Dataset& train_set,
                         const NormConfig& cfg);

// Bound pairs over n_batches seeded random batches drawn without
// replacement from train_set. The norm defaults to L2 over all parameters.
std::vector<BoundPair> batch_bound_pairs(const Model& model,
                                         const Dataset& train_set,
                                         std::size_t batch_size,
                                         std::size_t n_batches,
                                         std::uint64_t seed,
                                         const NormConfig& cfg = {NormKind::L2,
                                                                  ParamSubset::All});

// CSV: header "index,label,score", one row per example, full precision.
// A sidecar "<path>.meta" records norm, subset, model_id and seed.
void write_score_csv(const ScoreTable& scores, const std::string& path,
                     std::uint64_t seed);
ScoreTable load_score_csv(const std::string& path);

void write_bounds_csv(const std::vector<BoundPair>& pairs, const std::string& path);

double pearson_correlation(const std::vector<BoundPair>& pairs);

}  // namespace gradselect
