#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gradselect/config.hpp"
#include "gradselect/data_io.hpp"
#include "gradselect/diagnostics.hpp"
#include "gradselect/importance.hpp"
#include "gradselect/sampling.hpp"
#include "gradselect/train.hpp"

namespace gradselect {

struct DataSource {
    enum class Kind { Idx, Csv, Synth };
    Kind kind = Kind::Synth;
    // Idx: directory holding the four IDX files (or explicit file names).
    std::string dir;
    std::string train_images = "train-images-idx3-ubyte";
    std::string train_labels = "train-labels-idx1-ubyte";
    std::string test_images = "t10k-images-idx3-ubyte";
    std::string test_labels = "t10k-labels-idx1-ubyte";
    // Csv
    std::string train_csv;
    std::string test_csv;
    // Synth
    SynthSpec synth;
    std::size_t synth_test_n = 0;  // 0 -> max(n/5, 1000)

    // Optional cap on the training pool (seeded random subset), used for
    // reduced runs.
    std::size_t limit_train = 0;
    std::uint64_t limit_seed = 0;
};

struct ExperimentConfig {
    DataSource data;
    ArchKind arch_kind = ArchKind::Linear;
    std::vector<std::size_t> mlp_hidden = {64};
    std::size_t cnn_conv1 = 8, cnn_conv2 = 16, cnn_fc = 128;
    TrainConfig train;
    SplitSpec split_spec;
    NormConfig norm;
    std::vector<SelectionPolicy> policies;
    std::vector<double> fractions;  // ascending, in (0, 1]
    std::vector<std::uint64_t> repeat_seeds;
    std::string output_dir = "out";
    std::size_t bound_batches = 1000;
    std::size_t bound_batch_size = 0;  // 0 -> train.batch_size
    std::vector<std::size_t> entropy_ks;  // empty -> fraction ladder of N

    void validate() const;
};

// Parse/serialize the flat key=value format (see README for the key list).
ExperimentConfig experiment_config_from_kv(const KvConfig& kv);
KvConfig experiment_config_to_kv(const ExperimentConfig& cfg);

struct PolicyRunRow {
    std::string policy;
    double fraction = 0.0;
    std::uint64_t seed = 0;
    double test_acc = 0.0;
    std::string subsample_path;
    std::string train_log_path;
};

struct ExperimentReport {
    double full_test_acc = 0.0;
    std::vector<PolicyRunRow> rows;
    std::string score_csv;
    std::string model_path;
    std::string report_csv;
    std::string summary_path;
    std::vector<std::string> diagnostic_csvs;
};

// Everything a standalone retrain needs besides the persisted scores.
struct RetrainContext {
    const Dataset& train_split;
    const Dataset& val_split;
    const Dataset& test_set;
    ArchSpec arch;
    TrainConfig train;
    NormConfig norm;
};

// Select k = round(fraction * N) indices (>= 1) with the policy seeded by
// `seed`, retrain from a fresh random initialization with the same
// TrainConfig, and return the subsample with its test accuracy.
std::pair<Subsample, double> run_subsample_analysis(const ScoreTable& scores,
                                                    SelectionPolicy policy,
                                                    double fraction,
                                                    std::uint64_t seed,
                                                    const RetrainContext& ctx);

// The full pipeline: split, train on all data, score every training
// example, retrain per (policy, fraction, seed), emit diagnostics and the
// report. All artifacts land under cfg.output_dir.
ExperimentReport run_analysis(const ExperimentConfig& cfg);

// (train pool, test set) for the configured source.
std::pair<Dataset, Dataset> load_source(const DataSource& src);

ArchSpec build_arch(const ExperimentConfig& cfg, const Dataset& sample);

void write_report_csv(const ExperimentReport& report, const std::string& path);
void write_summary(const ExperimentReport& report, const ExperimentConfig& cfg,
                   const std::string& path);

}  // namespace gradselect
