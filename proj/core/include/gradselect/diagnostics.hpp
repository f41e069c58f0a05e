#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradselect/data_io.hpp"
#include "gradselect/importance.hpp"
#include "gradselect/train.hpp"

namespace gradselect {

// Shannon entropy (bits) of the label distribution among the top-k
// examples, per k; baseline is the uniform-label entropy log2(C).
struct EntropyCurve {
    std::vector<std::size_t> ks;
    std::vector<double> entropy_bits;
    double baseline_bits = 0.0;
};

// |top-k(a) intersect top-k(b)| / k per k.
struct OverlapCurve {
    std::vector<std::size_t> ks;
    std::vector<double> overlap;
    std::pair<std::string, std::string> pair;
};

// rows = probe examples, cols = epochs; values are -ln(max(g, 1e-12)).
struct HeatmapMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major
    std::vector<std::size_t> probe_indices;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

EntropyCurve label_entropy_topk(const ScoreTable& scores, int class_count,
                                const std::vector<std::size_t>& ks);

OverlapCurve overlap_curve(const ScoreTable& a, const ScoreTable& b,
                           const std::vector<std::size_t>& ks);

// Mean overlap of two independent uniform k-subsets of [0, n), averaged
// over seeded trials.
OverlapCurve random_overlap_baseline(std::size_t n,
                                     const std::vector<std::size_t>& ks,
                                     std::uint64_t seed, std::size_t trials);

HeatmapMatrix heatmap_matrix(const TrainLog& log);

// For each percentile p, the `count` example indices whose descending-rank
// positions straddle rank round((1 - p/100) * N), clamped into range.
std::vector<std::vector<std::size_t>> export_topk_examples(
    const ScoreTable& scores, const std::vector<double>& percentiles,
    std::size_t count);

// Shannon entropy in bits of a label histogram (0 log 0 = 0).
double label_entropy_bits(const std::vector<int>& labels, int class_count);

void write_entropy_csv(const EntropyCurve& curve, const std::string& path);
void write_overlap_csv(const OverlapCurve& curve, const std::string& path);
void write_heatmap_csv(const HeatmapMatrix& hm, const std::string& path);

}  // namespace gradselect
