#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gradselect/tensor.hpp"

namespace gradselect {

// Immutable labeled example store. Features are kept flat, one contiguous
// row of example_dim() doubles per example. orig_indices maps each row back
// to the parent dataset it was split from (identity for loaded data).
struct Dataset {
    std::vector<std::size_t> example_shape;  // e.g. {28, 28, 1} or {d}
    std::vector<double> features;
    std::vector<int> labels;
    int class_count = 0;
    std::string source_id;
    std::vector<std::size_t> orig_indices;

    std::size_t size() const { return labels.size(); }
    std::size_t example_dim() const { return shape_numel(example_shape); }
    const double* example(std::size_t i) const {
        return features.data() + i * example_dim();
    }
    // Batch tensor view copy: shape [n, ...example_shape].
    Tensor batch_tensor() const;
    Tensor example_tensor(std::size_t i) const;
    // Subset by row indices (ascending not required); orig_indices composed.
    Dataset subset(const std::vector<std::size_t>& rows) const;
    void validate() const;
};

struct SplitSpec {
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
};

enum class SynthKind { Redundant, Diverse };

// Mixture-of-Gaussians generator used to contrast redundant vs diverse
// training sets at desk scale.
struct SynthSpec {
    SynthKind kind = SynthKind::Redundant;
    int class_count = 10;
    std::size_t dim = 16;
    std::size_t n = 10000;
    std::uint64_t seed = 0;
    double within_class_spread = 0.05;
    std::size_t modes_per_class = 2;

    static SynthSpec redundant(int classes, std::size_t dim, std::size_t n,
                               std::uint64_t seed);
    static SynthSpec diverse(int classes, std::size_t dim, std::size_t n,
                             std::uint64_t seed);
};

// IDX container I/O (big-endian magic + dims, then raw unsigned bytes).
// Pixels are scaled to [0,1]; write_idx reverses the scaling exactly.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path);

// CSV dataset format: header "label,f0,f1,...", one example per row.
Dataset load_csv(const std::string& path, int class_count = 0);
void write_csv(const Dataset& ds, const std::string& path);

// Disjoint, exhaustive seeded split; |val| = round(val_fraction * N).
std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec);

Dataset synth(const SynthSpec& spec);
// Train and test sets drawn from the same seeded mode layout.
std::pair<Dataset, Dataset> synth_train_test(const SynthSpec& spec,
                                             std::size_t test_n);

// Default dataset root: $DATA_DIR if set, else "data".
std::string default_data_dir();

}  // namespace gradselect
