#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradselect/data_io.hpp"
#include "gradselect/importance.hpp"
#include "gradselect/model.hpp"

namespace gradselect {

struct TrainConfig {
    std::size_t batch_size = 64;
    int epochs = 50;
    double base_lr = 0.05;
    double lr_decay_factor = 0.1;
    std::vector<int> lr_decay_epochs = {30};  // sorted
    double weight_decay = 1e-4;
    int early_stop_patience = 10;  // <= 0 disables early stopping
    std::uint64_t seed = 0;
    std::size_t probe_set_size = 512;
};

// Per-epoch history of one training run plus the gradient-magnitude trace
// of a fixed probe subset (scored after every epoch).
struct TrainLog {
    std::vector<double> train_loss;
    std::vector<double> val_accuracy;  // empty entries stay at -1 when no val set
    std::vector<double> learning_rate;
    std::vector<std::size_t> probe_indices;  // rows of the probe matrix
    std::vector<double> probe_gradients;     // [probe_size x epochs], row-major
    int best_epoch = -1;

    std::size_t epochs_run() const { return train_loss.size(); }
    double probe_at(std::size_t probe_row, std::size_t epoch) const {
        return probe_gradients[probe_row * epochs_run() + epoch];
    }
};

// base_lr * decay_factor^(number of decay epochs <= epoch).
double lr_at(const TrainConfig& config, int epoch);

// In-place SGD step: p <- p - lr * (g + weight_decay * p). Throws
// std::runtime_error on non-finite gradients (step aborted).
void sgd_step(Model& model, const GradientVector& grad, double lr,
              double weight_decay);

// Minibatch SGD over train_set with seeded per-epoch shuffles. When val_set
// is non-empty the returned model is the best-validation snapshot (ties ->
// earlier epoch) and training stops after early_stop_patience epochs
// without improvement; otherwise the final epoch's parameters are returned.
std::pair<Model, TrainLog> train(const Model& initial, const Dataset& train_set,
                                 const Dataset& val_set, const TrainConfig& config,
                                 const NormConfig& probe_norm = {});

// Top-1 accuracy; argmax ties resolved to the lowest class index.
double evaluate(const Model& model, const Dataset& dataset);

// CSV: epoch,train_loss,val_acc,lr
void write_train_log_csv(const TrainLog& log, const std::string& path);
// CSV: example_index,epoch,grad_norm
void write_probe_csv(const TrainLog& log, const std::string& path);
// Rebuilds the probe matrix (and epoch count) from a probe CSV; the loss
// and accuracy histories are not stored there and come back as
// placeholders.
TrainLog load_probe_csv(const std::string& path);

}  // namespace gradselect
