#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradselect/importance.hpp"

namespace gradselect {

enum class PolicyKind { Random, MaxGradient, NonExtremeMaxGradient, GradientCDF };

struct SelectionPolicy {
    PolicyKind kind = PolicyKind::Random;
    double discard_fraction = 0.05;  // NonExtremeMaxGradient only
    std::uint64_t seed = 0;          // Random and GradientCDF only
};

std::string to_string(PolicyKind k);
PolicyKind policy_kind_from_string(const std::string& s);

// k unique indices in [0, N), sorted ascending.
struct Subsample {
    std::vector<std::size_t> indices;
    std::size_t k = 0;
    SelectionPolicy policy;

    void validate(std::size_t n) const;
};

// Uniform without-replacement sample; deterministic per seed.
Subsample select_random(std::size_t n, std::size_t k, std::uint64_t seed);

// The k largest scores; ties broken toward the lower index.
Subsample select_max_gradient(const ScoreTable& scores, std::size_t k);

// Descending rank order with the same tie-break; the top
// ceil(discard_fraction * N) ranks are dropped, then k are taken.
Subsample select_nonextreme(const ScoreTable& scores, std::size_t k,
                            double discard_fraction);

// Sequential without-replacement draws from the PMF P(i) = g_i / sum(g),
// renormalized over the remaining items after each draw. When the
// remaining mass is zero the rest of the draws are uniform.
Subsample select_gradient_cdf(const ScoreTable& scores, std::size_t k,
                              std::uint64_t seed);

// Dispatch on policy.kind.
Subsample select(const ScoreTable& scores, const SelectionPolicy& policy,
                 std::size_t k);

// Example indices in descending score order (ties -> lower index first).
std::vector<std::size_t> descending_rank(const ScoreTable& scores);

// Newline-delimited index file with one metadata header line:
//   policy=<kind> k=<k> seed=<seed> discard_fraction=<f>
void write_subsample(const Subsample& sub, const std::string& path);
Subsample load_subsample(const std::string& path);

}  // namespace gradselect
