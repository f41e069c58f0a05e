#include "gradselect/importance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "gradselect/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gradselect {

std::string to_string(NormKind k) {
    switch (k) {
        case NormKind::L1: return "l1";
        case NormKind::L2: return "l2";
        case NormKind::Linf: return "linf";
    }
    return "?";
}

std::string to_string(ParamSubset s) {
    switch (s) {
        case ParamSubset::All: return "all";
        case ParamSubset::BiasesOnly: return "biases";
        case ParamSubset::WeightsOnly: return "weights";
        case ParamSubset::LastLayerWeights: return "last_layer_weights";
    }
    return "?";
}

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "l1") return NormKind::L1;
    if (s == "l2") return NormKind::L2;
    if (s == "linf") return NormKind::Linf;
    throw std::invalid_argument("unknown norm kind: " + s);
}

ParamSubset param_subset_from_string(const std::string& s) {
    if (s == "all") return ParamSubset::All;
    if (s == "biases" || s == "a") return ParamSubset::BiasesOnly;
    if (s == "weights" || s == "b") return ParamSubset::WeightsOnly;
    if (s == "last_layer_weights" || s == "c") return ParamSubset::LastLayerWeights;
    throw std::invalid_argument("unknown parameter subset: " + s);
}

void ScoreTable::validate() const {
    if (labels.size() != scores.size()) {
        throw std::invalid_argument("score table: label/score length mismatch");
    }
    for (double g : scores) {
        if (!std::isfinite(g) || g < 0.0) {
            throw std::invalid_argument("score table: scores must be finite and >= 0");
        }
    }
}

namespace {

bool segment_selected(ParamRole role, int layer_index, int max_weight_layer,
                      ParamSubset subset) {
    switch (subset) {
        case ParamSubset::All: return true;
        case ParamSubset::BiasesOnly: return role == ParamRole::bias;
        case ParamSubset::WeightsOnly: return role == ParamRole::weight;
        case ParamSubset::LastLayerWeights:
            return role == ParamRole::weight && layer_index == max_weight_layer;
    }
    return false;
}

struct NormAccum {
    NormKind kind;
    double acc = 0.0;
    void add(const double* v, std::size_t n) {
        switch (kind) {
            case NormKind::L1:
                for (std::size_t i = 0; i < n; ++i) acc += std::fabs(v[i]);
                break;
            case NormKind::L2:
                for (std::size_t i = 0; i < n; ++i) acc += v[i] * v[i];
                break;
            case NormKind::Linf:
                for (std::size_t i = 0; i < n; ++i) acc = std::max(acc, std::fabs(v[i]));
                break;
        }
    }
    double finish() const { return kind == NormKind::L2 ? std::sqrt(acc) : acc; }
};

// (offset, length) spans of the flat gradient selected by cfg.
std::vector<std::pair<std::size_t, std::size_t>> selected_ranges(
    const Model& model, const NormConfig& cfg) {
    int max_weight_layer = -1;
    for (const auto& s : model.segments()) {
        if (s.role == ParamRole::weight) {
            max_weight_layer = std::max(max_weight_layer, s.layer_index);
        }
    }
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::size_t off = 0;
    for (const auto& s : model.segments()) {
        if (segment_selected(s.role, s.layer_index, max_weight_layer, cfg.subset)) {
            ranges.emplace_back(off, s.values.numel());
        }
        off += s.values.numel();
    }
    if (ranges.empty()) {
        throw std::invalid_argument("gradient_norm: subset selects no coordinates");
    }
    return ranges;
}

double flat_norm(const double* flat,
                 const std::vector<std::pair<std::size_t, std::size_t>>& ranges,
                 NormKind kind) {
    NormAccum a{kind};
    for (auto [off, len] : ranges) a.add(flat + off, len);
    return a.finish();
}

}  // namespace

double gradient_norm(const GradientVector& grad, const NormConfig& cfg) {
    int max_weight_layer = -1;
    for (const auto& s : grad.segments) {
        if (s.role == ParamRole::weight) {
            max_weight_layer = std::max(max_weight_layer, s.layer_index);
        }
    }
    NormAccum a{cfg.norm};
    bool any = false;
    for (const auto& s : grad.segments) {
        if (!segment_selected(s.role, s.layer_index, max_weight_layer, cfg.subset)) {
            continue;
        }
        any = true;
        a.add(s.values.ptr(), s.values.numel());
    }
    if (!any) {
        throw std::invalid_argument("gradient_norm: subset selects no coordinates");
    }
    return a.finish();
}

ScoreTable score_dataset(const Model& model, const Dataset& train_set,
                         const NormConfig& cfg) {
    const std::size_t n = train_set.size();
    const std::size_t p = model.param_count();
    auto ranges = selected_ranges(model, cfg);

    ScoreTable table;
    table.scores.resize(n);
    table.labels = train_set.labels;
    table.norm_config = cfg;
    table.model_id = model.spec().name();

#ifdef _OPENMP
    const int nthreads = omp_get_max_threads();
#else
    const int nthreads = 1;
#endif
    std::vector<Workspace> ws(nthreads);
    std::vector<std::vector<double>> flat(nthreads, std::vector<double>(p));

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16)
#endif
    for (std::size_t i = 0; i < n; ++i) {
#ifdef _OPENMP
        const int tid = omp_get_thread_num();
#else
        const int tid = 0;
#endif
        detail::backprop_flat(model, train_set.example(i), train_set.labels[i],
                              flat[tid].data(), ws[tid]);
        table.scores[i] = flat_norm(flat[tid].data(), ranges, cfg.norm);
    }
    return table;
}

std::vector<BoundPair> batch_bound_pairs(const Model& model,
                                         const Dataset& train_set,
                                         std::size_t batch_size,
                                         std::size_t n_batches,
                                         std::uint64_t seed,
                                         const NormConfig& cfg) {
    if (batch_size < 1) throw std::invalid_argument("bound pairs: batch_size < 1");
    if (n_batches == 0) throw std::invalid_argument("bound pairs: n_batches <= 0");
    const std::size_t n = train_set.size();
    if (batch_size > n) throw std::invalid_argument("bound pairs: batch larger than dataset");
    const std::size_t p = model.param_count();
    auto ranges = selected_ranges(model, cfg);

    std::vector<BoundPair> pairs(n_batches);

#ifdef _OPENMP
#pragma omp parallel
#endif
    {
        Workspace ws;
        std::vector<double> flat(p);
        std::vector<double> sum(p);
        std::vector<std::size_t> perm(n);

#ifdef _OPENMP
#pragma omp for schedule(dynamic)
#endif
        for (std::size_t b = 0; b < n_batches; ++b) {
            // Each batch draws from its own derived seed, so results do not
            // depend on which thread handles it.
            auto rng = make_rng(derive_seed(seed, b));
            std::iota(perm.begin(), perm.end(), std::size_t(0));
            for (std::size_t j = 0; j < batch_size; ++j) {
                std::uniform_int_distribution<std::size_t> pick(j, n - 1);
                std::swap(perm[j], perm[pick(rng)]);
            }
            std::fill(sum.begin(), sum.end(), 0.0);
            double rhs = 0.0;
            for (std::size_t j = 0; j < batch_size; ++j) {
                std::size_t idx = perm[j];
                detail::backprop_flat(model, train_set.example(idx),
                                      train_set.labels[idx], flat.data(), ws);
                rhs += flat_norm(flat.data(), ranges, cfg.norm);
                for (std::size_t q = 0; q < p; ++q) sum[q] += flat[q];
            }
            pairs[b] = {flat_norm(sum.data(), ranges, cfg.norm), rhs, batch_size};
        }
    }
    return pairs;
}

void write_score_csv(const ScoreTable& scores, const std::string& path,
                     std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("scores: cannot write " + path);
    out << "index,label,score\n";
    char buf[32];
    for (std::size_t i = 0; i < scores.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", scores.scores[i]);
        out << i << ',' << scores.labels[i] << ',' << buf << "\n";
    }
    std::ofstream meta(path + ".meta");
    if (!meta) throw std::runtime_error("scores: cannot write " + path + ".meta");
    meta << "norm=" << to_string(scores.norm_config.norm) << "\n";
    meta << "subset=" << to_string(scores.norm_config.subset) << "\n";
    meta << "model_id=" << scores.model_id << "\n";
    meta << "seed=" << seed << "\n";
}

ScoreTable load_score_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("scores: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("index,label,score", 0) != 0) {
        throw std::runtime_error("scores: bad header in " + path);
    }
    ScoreTable table;
    std::size_t expected = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t idx;
        int label;
        double score;
        if (std::sscanf(line.c_str(), "%zu,%d,%lf", &idx, &label, &score) != 3) {
            throw std::runtime_error("scores: bad row in " + path + ": " + line);
        }
        if (idx != expected) {
            throw std::runtime_error("scores: rows out of order in " + path);
        }
        ++expected;
        table.labels.push_back(label);
        table.scores.push_back(score);
    }
    std::ifstream meta(path + ".meta");
    if (meta) {
        while (std::getline(meta, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq);
            std::string val = line.substr(eq + 1);
            if (key == "norm") table.norm_config.norm = norm_kind_from_string(val);
            if (key == "subset") table.norm_config.subset = param_subset_from_string(val);
            if (key == "model_id") table.model_id = val;
        }
    }
    table.validate();
    return table;
}

void write_bounds_csv(const std::vector<BoundPair>& pairs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("bounds: cannot write " + path);
    out << "batch_id,lhs,rhs\n";
    char b1[32], b2[32];
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::snprintf(b1, sizeof(b1), "%.17g", pairs[i].lhs);
        std::snprintf(b2, sizeof(b2), "%.17g", pairs[i].rhs);
        out << i << ',' << b1 << ',' << b2 << "\n";
    }
}

double pearson_correlation(const std::vector<BoundPair>& pairs) {
    const std::size_t n = pairs.size();
    if (n < 2) throw std::invalid_argument("pearson: need at least two pairs");
    double mx = 0.0, my = 0.0;
    for (const auto& p : pairs) {
        mx += p.lhs;
        my += p.rhs;
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (const auto& p : pairs) {
        double dx = p.lhs - mx;
        double dy = p.rhs - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace gradselect
