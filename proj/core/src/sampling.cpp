#include "gradselect/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "gradselect/rng.hpp"

namespace gradselect {

std::string to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::Random: return "random";
        case PolicyKind::MaxGradient: return "max_gradient";
        case PolicyKind::NonExtremeMaxGradient: return "nonextreme_max_gradient";
        case PolicyKind::GradientCDF: return "gradient_cdf";
    }
    return "?";
}

PolicyKind policy_kind_from_string(const std::string& s) {
    if (s == "random") return PolicyKind::Random;
    if (s == "max_gradient") return PolicyKind::MaxGradient;
    if (s == "nonextreme_max_gradient" || s == "nonextreme") {
        return PolicyKind::NonExtremeMaxGradient;
    }
    if (s == "gradient_cdf") return PolicyKind::GradientCDF;
    throw std::invalid_argument("unknown policy: " + s);
}

void Subsample::validate(std::size_t n) const {
    if (indices.size() != k) throw std::invalid_argument("subsample: |indices| != k");
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= n) throw std::invalid_argument("subsample: index out of range");
        if (i > 0 && indices[i] <= indices[i - 1]) {
            throw std::invalid_argument("subsample: indices not strictly increasing");
        }
    }
}

Subsample select_random(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k > n) throw std::invalid_argument("select_random: k > n");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    auto rng = make_rng(seed);
    for (std::size_t j = 0; j < k; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, n - 1);
        std::swap(perm[j], perm[pick(rng)]);
    }
    Subsample sub;
    sub.indices.assign(perm.begin(), perm.begin() + k);
    std::sort(sub.indices.begin(), sub.indices.end());
    sub.k = k;
    sub.policy = {PolicyKind::Random, 0.0, seed};
    return sub;
}

std::vector<std::size_t> descending_rank(const ScoreTable& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores.scores[a] != scores.scores[b]) {
            return scores.scores[a] > scores.scores[b];
        }
        return a < b;
    });
    return order;
}

Subsample select_max_gradient(const ScoreTable& scores, std::size_t k) {
    if (k > scores.size()) throw std::invalid_argument("select_max_gradient: k > N");
    auto order = descending_rank(scores);
    Subsample sub;
    sub.indices.assign(order.begin(), order.begin() + k);
    std::sort(sub.indices.begin(), sub.indices.end());
    sub.k = k;
    sub.policy = {PolicyKind::MaxGradient, 0.0, 0};
    return sub;
}

Subsample select_nonextreme(const ScoreTable& scores, std::size_t k,
                            double discard_fraction) {
    if (discard_fraction < 0.0 || discard_fraction >= 1.0) {
        throw std::invalid_argument("select_nonextreme: discard_fraction outside [0,1)");
    }
    const std::size_t n = scores.size();
    const std::size_t discard = static_cast<std::size_t>(
        std::ceil(discard_fraction * static_cast<double>(n)));
    if (k + discard > n) {
        throw std::invalid_argument("select_nonextreme: k too large after discard");
    }
    auto order = descending_rank(scores);
    Subsample sub;
    sub.indices.assign(order.begin() + discard, order.begin() + discard + k);
    std::sort(sub.indices.begin(), sub.indices.end());
    sub.k = k;
    sub.policy = {PolicyKind::NonExtremeMaxGradient, discard_fraction, 0};
    return sub;
}

namespace {

// Fenwick tree over item masses; supports prefix sums, point updates and
// searching for the smallest index whose prefix sum exceeds a target.
class MassTree {
public:
    explicit MassTree(const std::vector<double>& w)
        : n_(w.size()), tree_(w.size() + 1, 0.0) {
        for (std::size_t i = 0; i < n_; ++i) tree_[i + 1] = w[i];
        for (std::size_t i = 1; i <= n_; ++i) {
            std::size_t parent = i + (i & (~i + 1));
            if (parent <= n_) tree_[parent] += tree_[i];
        }
    }

    double total() const {
        double s = 0.0;
        for (std::size_t i = n_; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }

    void remove(std::size_t idx, double mass) {
        for (std::size_t i = idx + 1; i <= n_; i += i & (~i + 1)) tree_[i] -= mass;
    }

    // Smallest index with prefix sum > target (target in [0, total)).
    std::size_t find(double target) const {
        std::size_t pos = 0;
        std::size_t step = 1;
        while (2 * step <= n_) step *= 2;
        for (; step > 0; step /= 2) {
            std::size_t next = pos + step;
            if (next <= n_ && tree_[next] <= target) {
                target -= tree_[next];
                pos = next;
            }
        }
        return pos;  // 0-based item index
    }

private:
    std::size_t n_;
    std::vector<double> tree_;
};

}  // namespace

Subsample select_gradient_cdf(const ScoreTable& scores, std::size_t k,
                              std::uint64_t seed) {
    const std::size_t n = scores.size();
    if (k > n) throw std::invalid_argument("select_gradient_cdf: k > N");
    scores.validate();

    auto rng = make_rng(seed);
    MassTree tree(scores.scores);
    std::vector<bool> taken(n, false);
    std::vector<std::size_t> picked;
    picked.reserve(k);

    std::size_t drawn = 0;
    while (drawn < k) {
        double total = tree.total();
        if (total <= 0.0) break;  // remaining mass exhausted
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        std::size_t idx = tree.find(target);
        if (idx >= n || taken[idx]) {
            // Float round-off at the upper edge; retry from the top item.
            idx = n;
            for (std::size_t i = n; i-- > 0;) {
                if (!taken[i] && scores.scores[i] > 0.0) {
                    idx = i;
                    break;
                }
            }
            if (idx == n) break;
        }
        taken[idx] = true;
        tree.remove(idx, scores.scores[idx]);
        picked.push_back(idx);
        ++drawn;
    }

    // Zero-mass fallback: uniform over the untaken remainder.
    if (drawn < k) {
        std::vector<std::size_t> rest;
        rest.reserve(n - drawn);
        for (std::size_t i = 0; i < n; ++i) {
            if (!taken[i]) rest.push_back(i);
        }
        for (std::size_t j = 0; drawn < k; ++j, ++drawn) {
            std::uniform_int_distribution<std::size_t> pick(j, rest.size() - 1);
            std::swap(rest[j], rest[pick(rng)]);
            picked.push_back(rest[j]);
        }
    }

    Subsample sub;
    sub.indices = std::move(picked);
    std::sort(sub.indices.begin(), sub.indices.end());
    sub.k = k;
    sub.policy = {PolicyKind::GradientCDF, 0.0, seed};
    return sub;
}

Subsample select(const ScoreTable& scores, const SelectionPolicy& policy,
                 std::size_t k) {
    Subsample sub;
    switch (policy.kind) {
        case PolicyKind::Random:
            sub = select_random(scores.size(), k, policy.seed);
            break;
        case PolicyKind::MaxGradient:
            sub = select_max_gradient(scores, k);
            break;
        case PolicyKind::NonExtremeMaxGradient:
            sub = select_nonextreme(scores, k, policy.discard_fraction);
            break;
        case PolicyKind::GradientCDF:
            sub = select_gradient_cdf(scores, k, policy.seed);
            break;
    }
    sub.policy = policy;
    return sub;
}

void write_subsample(const Subsample& sub, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("subsample: cannot write " + path);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", sub.policy.discard_fraction);
    out << "policy=" << to_string(sub.policy.kind) << " k=" << sub.k
        << " seed=" << sub.policy.seed << " discard_fraction=" << buf << "\n";
    for (std::size_t i : sub.indices) out << i << "\n";
}

Subsample load_subsample(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("subsample: cannot open " + path);
    std::string header;
    if (!std::getline(in, header) || header.rfind("policy=", 0) != 0) {
        throw std::runtime_error("subsample: missing metadata header in " + path);
    }
    Subsample sub;
    {
        char policy[64];
        std::size_t k;
        unsigned long long seed;
        double discard;
        if (std::sscanf(header.c_str(),
                        "policy=%63s k=%zu seed=%llu discard_fraction=%lf",
                        policy, &k, &seed, &discard) != 4) {
            throw std::runtime_error("subsample: bad metadata header in " + path);
        }
        sub.k = k;
        sub.policy = {policy_kind_from_string(policy), discard,
                      static_cast<std::uint64_t>(seed)};
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        sub.indices.push_back(std::stoull(line));
    }
    if (sub.indices.size() != sub.k) {
        throw std::runtime_error("subsample: index count does not match header k");
    }
    return sub;
}

}  // namespace gradselect
