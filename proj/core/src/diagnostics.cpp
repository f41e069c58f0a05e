#include "gradselect/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "gradselect/rng.hpp"
#include "gradselect/sampling.hpp"

namespace gradselect {

namespace {
constexpr double kLogFloor = 1e-12;
}

double label_entropy_bits(const std::vector<int>& labels, int class_count) {
    if (labels.empty()) throw std::invalid_argument("entropy: empty label set");
    std::vector<std::size_t> hist(class_count, 0);
    for (int y : labels) {
        if (y < 0 || y >= class_count) {
            throw std::invalid_argument("entropy: label out of range");
        }
        ++hist[y];
    }
    const double n = static_cast<double>(labels.size());
    double h = 0.0;
    for (std::size_t c : hist) {
        if (c == 0) continue;  // 0 log 0 = 0
        double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

EntropyCurve label_entropy_topk(const ScoreTable& scores, int class_count,
                                const std::vector<std::size_t>& ks) {
    const std::size_t n = scores.size();
    auto order = descending_rank(scores);
    EntropyCurve curve;
    curve.ks = ks;
    curve.baseline_bits = std::log2(static_cast<double>(class_count));
    for (std::size_t k : ks) {
        if (k == 0 || k > n) throw std::invalid_argument("entropy: k out of (0, N]");
        std::vector<int> top_labels(k);
        for (std::size_t i = 0; i < k; ++i) top_labels[i] = scores.labels[order[i]];
        curve.entropy_bits.push_back(label_entropy_bits(top_labels, class_count));
    }
    return curve;
}

OverlapCurve overlap_curve(const ScoreTable& a, const ScoreTable& b,
                           const std::vector<std::size_t>& ks) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("overlap: score tables differ in size");
    }
    const std::size_t n = a.size();
    auto order_a = descending_rank(a);
    auto order_b = descending_rank(b);
    OverlapCurve curve;
    curve.ks = ks;
    curve.pair = {a.model_id, b.model_id};
    std::vector<char> in_a(n, 0);
    for (std::size_t k : ks) {
        if (k == 0 || k > n) throw std::invalid_argument("overlap: k out of (0, N]");
        std::fill(in_a.begin(), in_a.end(), 0);
        for (std::size_t i = 0; i < k; ++i) in_a[order_a[i]] = 1;
        std::size_t inter = 0;
        for (std::size_t i = 0; i < k; ++i) inter += in_a[order_b[i]];
        curve.overlap.push_back(static_cast<double>(inter) / static_cast<double>(k));
    }
    return curve;
}

OverlapCurve random_overlap_baseline(std::size_t n,
                                     const std::vector<std::size_t>& ks,
                                     std::uint64_t seed, std::size_t trials) {
    if (trials == 0) throw std::invalid_argument("overlap baseline: trials == 0");
    OverlapCurve curve;
    curve.ks = ks;
    curve.pair = {"rand1", "rand2"};
    std::vector<char> in_a(n, 0);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        std::size_t k = ks[ki];
        if (k == 0 || k > n) throw std::invalid_argument("overlap baseline: k out of (0, N]");
        double acc = 0.0;
        for (std::size_t t = 0; t < trials; ++t) {
            auto sa = select_random(n, k, derive_seed(seed, 2 * (ki * trials + t)));
            auto sb = select_random(n, k, derive_seed(seed, 2 * (ki * trials + t) + 1));
            std::fill(in_a.begin(), in_a.end(), 0);
            for (std::size_t i : sa.indices) in_a[i] = 1;
            std::size_t inter = 0;
            for (std::size_t i : sb.indices) inter += in_a[i];
            acc += static_cast<double>(inter) / static_cast<double>(k);
        }
        curve.overlap.push_back(acc / static_cast<double>(trials));
    }
    return curve;
}

HeatmapMatrix heatmap_matrix(const TrainLog& log) {
    if (log.epochs_run() == 0 || log.probe_indices.empty()) {
        throw std::invalid_argument("heatmap: empty training log");
    }
    HeatmapMatrix hm;
    hm.rows = log.probe_indices.size();
    hm.cols = log.epochs_run();
    hm.probe_indices = log.probe_indices;
    hm.values.resize(hm.rows * hm.cols);
    for (std::size_t r = 0; r < hm.rows; ++r) {
        for (std::size_t e = 0; e < hm.cols; ++e) {
            hm.values[r * hm.cols + e] =
                -std::log(std::max(log.probe_at(r, e), kLogFloor));
        }
    }
    return hm;
}

std::vector<std::vector<std::size_t>> export_topk_examples(
    const ScoreTable& scores, const std::vector<double>& percentiles,
    std::size_t count) {
    const std::size_t n = scores.size();
    if (count == 0 || count > n) {
        throw std::invalid_argument("export_topk: count out of (0, N]");
    }
    auto order = descending_rank(scores);
    std::vector<std::vector<std::size_t>> groups;
    for (double p : percentiles) {
        if (p < 0.0 || p > 100.0) {
            throw std::invalid_argument("export_topk: percentile outside [0,100]");
        }
        // 1-based descending rank that the percentile maps to.
        long center = std::lround((1.0 - p / 100.0) * static_cast<double>(n));
        center = std::clamp(center, 1L, static_cast<long>(n));
        long start = center - 1 - static_cast<long>((count - 1) / 2);
        start = std::clamp(start, 0L, static_cast<long>(n - count));
        groups.emplace_back(order.begin() + start, order.begin() + start + count);
    }
    return groups;
}

void write_entropy_csv(const EntropyCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("entropy: cannot write " + path);
    out << "k,entropy_bits,baseline_bits\n";
    char b1[32], b2[32];
    std::snprintf(b2, sizeof(b2), "%.17g", curve.baseline_bits);
    for (std::size_t i = 0; i < curve.ks.size(); ++i) {
        std::snprintf(b1, sizeof(b1), "%.17g", curve.entropy_bits[i]);
        out << curve.ks[i] << ',' << b1 << ',' << b2 << "\n";
    }
}

void write_overlap_csv(const OverlapCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("overlap: cannot write " + path);
    out << "k,overlap,pair\n";
    char buf[32];
    for (std::size_t i = 0; i < curve.ks.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", curve.overlap[i]);
        out << curve.ks[i] << ',' << buf << ',' << curve.pair.first << '|'
            << curve.pair.second << "\n";
    }
}

void write_heatmap_csv(const HeatmapMatrix& hm, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("heatmap: cannot write " + path);
    out << "probe_index,epoch,neg_log_mag\n";
    char buf[32];
    for (std::size_t r = 0; r < hm.rows; ++r) {
        for (std::size_t e = 0; e < hm.cols; ++e) {
            std::snprintf(buf, sizeof(buf), "%.17g", hm.at(r, e));
            out << r << ',' << e << ',' << buf << "\n";
        }
    }
}

}  // namespace gradselect
