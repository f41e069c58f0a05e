#include "gradselect/train.hpp"

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

namespace {
// Stream tags for seed derivation so probe selection, epoch shuffles and
// any caller-derived seeds never collide.
constexpr std::uint64_t kProbeStream = 0xBE;
constexpr std::uint64_t kEpochStream = 0xE0;
}  // namespace

double lr_at(const TrainConfig& config, int epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
    int decays = 0;
    for (int d : config.lr_decay_epochs) {
        if (d <= epoch) ++decays;
    }
    return config.base_lr * std::pow(config.lr_decay_factor, decays);
}

void sgd_step(Model& model, const GradientVector& grad, double lr,
              double weight_decay) {
    if (!congruent(model, grad)) {
        throw std::invalid_argument("sgd_step: gradient not congruent with model");
    }
    for (const auto& s : grad.segments) {
        if (!all_finite(s.values)) {
            throw std::runtime_error("sgd_step: non-finite gradient, step aborted");
        }
    }
    auto& segs = model.segments();
    for (std::size_t i = 0; i < segs.size(); ++i) {
        double* p = segs[i].values.ptr();
        const double* g = grad.segments[i].values.ptr();
        const std::size_t n = segs[i].values.numel();
        for (std::size_t j = 0; j < n; ++j) {
            p[j] -= lr * (g[j] + weight_decay * p[j]);
        }
    }
}

double evaluate(const Model& model, const Dataset& dataset) {
    const std::size_t n = dataset.size();
    if (n == 0) throw std::invalid_argument("evaluate: empty dataset");
    const std::size_t c = model.class_count();
    std::size_t correct = 0;

#ifdef _OPENMP
#pragma omp parallel reduction(+ : correct)
#endif
    {
        Workspace ws;
        std::vector<double> logits(c);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (std::size_t i = 0; i < n; ++i) {
            forward_example(model, dataset.example(i), logits.data(), ws);
            std::size_t arg = 0;
            for (std::size_t j = 1; j < c; ++j) {
                if (logits[j] > logits[arg]) arg = j;  // ties keep lowest index
            }
            if (static_cast<int>(arg) == dataset.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

namespace {

// Post-epoch gradient magnitudes of the probe subset.
void probe_norms(const Model& model, const Dataset& train_set,
                 const std::vector<std::size_t>& probe_idx,
                 const NormConfig& probe_norm, double* out) {
    const std::size_t p = model.param_count();
#ifdef _OPENMP
    const int nthreads = omp_get_max_threads();
#else
    const int nthreads = 1;
#endif
    std::vector<Workspace> ws(nthreads);
    std::vector<std::vector<double>> flat(nthreads, std::vector<double>(p));
    GradientVector proto = model.zero_gradient();

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
    for (std::size_t r = 0; r < probe_idx.size(); ++r) {
#ifdef _OPENMP
        const int tid = omp_get_thread_num();
#else
        const int tid = 0;
#endif
        std::size_t i = probe_idx[r];
        detail::backprop_flat(model, train_set.example(i), train_set.labels[i],
                              flat[tid].data(), ws[tid]);
        GradientVector g = proto;
        g.from_flat(flat[tid].data());
        out[r] = gradient_norm(g, probe_norm);
    }
}

}  // namespace

std::pair<Model, TrainLog> train(const Model& initial, const Dataset& train_set,
                                 const Dataset& val_set, const TrainConfig& config,
                                 const NormConfig& probe_norm) {
    if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
    if (config.batch_size < 1) throw std::invalid_argument("train: batch_size < 1");
    if (config.base_lr <= 0.0) throw std::invalid_argument("train: base_lr <= 0");
    if (config.lr_decay_factor <= 0.0 || config.lr_decay_factor > 1.0) {
        throw std::invalid_argument("train: lr_decay_factor outside (0,1]");
    }

    const std::size_t n = train_set.size();
    const std::size_t d = train_set.example_dim();
    if (d != initial.spec().input_numel()) {
        throw std::invalid_argument("train: dataset example size does not match model input");
    }

    Model model = initial;
    TrainLog log;

    // Fixed probe subset, chosen once per run.
    const std::size_t probe_size = std::min(config.probe_set_size, n);
    {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t(0));
        auto rng = make_rng(derive_seed(config.seed, kProbeStream));
        std::shuffle(perm.begin(), perm.end(), rng);
        log.probe_indices.assign(perm.begin(), perm.begin() + probe_size);
        std::sort(log.probe_indices.begin(), log.probe_indices.end());
    }
    std::vector<std::vector<double>> probe_cols;  // one column per epoch

    const bool has_val = val_set.size() > 0;
    Model best_model = model;
    double best_acc = -1.0;
    int epochs_since_best = 0;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    std::vector<const double*> xs(config.batch_size);
    std::vector<int> ys(config.batch_size);
    BatchGradScratch scratch;
    std::vector<double> mean_flat(model.param_count());
    GradientVector grad = model.zero_gradient();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(config, epoch);
        auto rng = make_rng(derive_seed(derive_seed(config.seed, kEpochStream),
                                        static_cast<std::uint64_t>(epoch)));
        std::shuffle(perm.begin(), perm.end(), rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t bsz = std::min(config.batch_size, n - start);
            xs.resize(bsz);
            ys.resize(bsz);
            for (std::size_t j = 0; j < bsz; ++j) {
                xs[j] = train_set.example(perm[start + j]);
                ys[j] = train_set.labels[perm[start + j]];
            }
            double batch_loss = detail::batch_backprop(model, xs, ys,
                                                       mean_flat.data(), scratch);
            grad.from_flat(mean_flat.data());
            sgd_step(model, grad, lr, config.weight_decay);
            loss_sum += batch_loss * static_cast<double>(bsz);
        }

        log.train_loss.push_back(loss_sum / static_cast<double>(n));
        log.learning_rate.push_back(lr);

        probe_cols.emplace_back(probe_size);
        probe_norms(model, train_set, log.probe_indices, probe_norm,
                    probe_cols.back().data());

        if (has_val) {
            double acc = evaluate(model, val_set);
            log.val_accuracy.push_back(acc);
            if (acc > best_acc) {  // ties keep the earlier epoch
                best_acc = acc;
                best_model = model;
                log.best_epoch = epoch;
                epochs_since_best = 0;
            } else {
                ++epochs_since_best;
            }
            if (config.early_stop_patience > 0 &&
                epochs_since_best >= config.early_stop_patience) {
                break;
            }
        } else {
            log.val_accuracy.push_back(-1.0);
        }
    }

    const std::size_t epochs_run = log.train_loss.size();
    log.probe_gradients.resize(probe_size * epochs_run);
    for (std::size_t e = 0; e < epochs_run; ++e) {
        for (std::size_t r = 0; r < probe_size; ++r) {
            log.probe_gradients[r * epochs_run + e] = probe_cols[e][r];
        }
    }

    if (has_val) return {std::move(best_model), std::move(log)};
    log.best_epoch = static_cast<int>(epochs_run) - 1;
    return {std::move(model), std::move(log)};
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("train log: cannot write " + path);
    out << "epoch,train_loss,val_acc,lr\n";
    char b1[32], b2[32], b3[32];
    for (std::size_t e = 0; e < log.epochs_run(); ++e) {
        std::snprintf(b1, sizeof(b1), "%.17g", log.train_loss[e]);
        std::snprintf(b2, sizeof(b2), "%.17g", log.val_accuracy[e]);
        std::snprintf(b3, sizeof(b3), "%.17g", log.learning_rate[e]);
        out << e << ',' << b1 << ',' << b2 << ',' << b3 << "\n";
    }
}

void write_probe_csv(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("probe log: cannot write " + path);
    out << "example_index,epoch,grad_norm\n";
    char buf[32];
    for (std::size_t r = 0; r < log.probe_indices.size(); ++r) {
        for (std::size_t e = 0; e < log.epochs_run(); ++e) {
            std::snprintf(buf, sizeof(buf), "%.17g", log.probe_at(r, e));
            out << log.probe_indices[r] << ',' << e << ',' << buf << "\n";
        }
    }
}

TrainLog load_probe_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("probe log: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("example_index,epoch,grad_norm", 0) != 0) {
        throw std::runtime_error("probe log: bad header in " + path);
    }
    struct Row {
        std::size_t example;
        std::size_t epoch;
        double norm;
    };
    std::vector<Row> rows;
    std::size_t epochs = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Row r;
        if (std::sscanf(line.c_str(), "%zu,%zu,%lf", &r.example, &r.epoch, &r.norm) != 3) {
            throw std::runtime_error("probe log: bad row in " + path + ": " + line);
        }
        epochs = std::max(epochs, r.epoch + 1);
        rows.push_back(r);
    }
    if (rows.empty()) throw std::runtime_error("probe log: no rows in " + path);

    TrainLog log;
    for (const Row& r : rows) {
        if (log.probe_indices.empty() || log.probe_indices.back() != r.example) {
            log.probe_indices.push_back(r.example);
        }
    }
    log.train_loss.assign(epochs, 0.0);
    log.val_accuracy.assign(epochs, -1.0);
    log.learning_rate.assign(epochs, 0.0);
    log.probe_gradients.assign(log.probe_indices.size() * epochs, 0.0);
    std::size_t row_pos = 0;
    for (const Row& r : rows) {
        if (log.probe_indices[row_pos] != r.example) ++row_pos;
        if (row_pos >= log.probe_indices.size() ||
            log.probe_indices[row_pos] != r.example || r.epoch >= epochs) {
            throw std::runtime_error("probe log: rows out of order in " + path);
        }
        log.probe_gradients[row_pos * epochs + r.epoch] = r.norm;
    }
    return log;
}

}  // namespace gradselect
