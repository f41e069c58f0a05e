#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gradselect/tensor.hpp"

namespace gradselect {

enum class ParamRole { weight, bias };

enum class ArchKind { Linear, MLP, SmallCNN };

// Concrete shape of one of the three supported classifier architectures.
// SmallCNN is fixed to 2 convolution layers (5x5, stride 1, valid padding,
// each followed by ReLU and 2x2 max-pool) and 2 fully connected layers.
// Channel/width knobs exist so tests can instantiate tiny variants; the
// defaults are the sizes used for MNIST-scale runs.
struct ArchSpec {
    ArchKind kind = ArchKind::Linear;
    std::size_t input_dim = 0;  // Linear / MLP flat input size
    std::vector<std::size_t> hidden;  // MLP hidden layer sizes

    // SmallCNN input geometry and widths
    std::size_t input_rows = 0;
    std::size_t input_cols = 0;
    std::size_t input_channels = 1;
    std::size_t conv1_filters = 8;
    std::size_t conv2_filters = 16;
    std::size_t fc_width = 128;

    std::size_t class_count = 2;

    static ArchSpec linear(std::size_t input_dim, std::size_t classes);
    static ArchSpec mlp(std::size_t input_dim, std::vector<std::size_t> hidden,
                        std::size_t classes);
    static ArchSpec small_cnn(std::size_t rows, std::size_t cols,
                              std::size_t channels, std::size_t classes,
                              std::size_t conv1 = 8, std::size_t conv2 = 16,
                              std::size_t fc = 128);

    std::size_t input_numel() const;
    // Closed-form total parameter count for the architecture.
    std::size_t param_count() const;
    std::string name() const;
};

struct ParameterSegment {
    std::string name;
    int layer_index = 0;
    ParamRole role = ParamRole::weight;
    Tensor values;
};

// Gradient with the same segment partition as the model it came from.
struct GradientVector {
    struct Segment {
        std::string name;
        int layer_index = 0;
        ParamRole role = ParamRole::weight;
        Tensor values;
    };
    std::vector<Segment> segments;

    std::size_t param_count() const;
    // In-place axpy: this += alpha * other. Partitions must match.
    void add_scaled(const GradientVector& other, double alpha);
    void scale(double alpha);
    void fill(double value);
    // Copy to/from the flat layout (segments concatenated in order).
    void from_flat(const double* flat);
    void to_flat(double* flat) const;
};

class Model {
public:
    Model() = default;
    explicit Model(const ArchSpec& spec);  // all parameters zero

    // Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
    static Model init_random(const ArchSpec& spec, std::uint64_t seed);

    const ArchSpec& spec() const { return spec_; }
    std::size_t class_count() const { return spec_.class_count; }
    std::size_t param_count() const;

    std::vector<ParameterSegment>& segments() { return segments_; }
    const std::vector<ParameterSegment>& segments() const { return segments_; }
    const ParameterSegment& segment(const std::string& name) const;

    // Zero-valued gradient with this model's partition.
    GradientVector zero_gradient() const;

private:
    ArchSpec spec_;
    std::vector<ParameterSegment> segments_;
};

bool congruent(const Model& model, const GradientVector& grad);

// Scratch buffers for forward/backward passes. One per thread; contents
// are overwritten on every call.
struct Workspace {
    std::vector<double> act;    // activations, layout depends on arch
    std::vector<double> grad;   // intermediate gradients
    std::vector<int> argmax;    // max-pool winner offsets (SmallCNN)
};

// Logits for a batch. `inputs` has shape [n, ...example dims] (or exactly
// the example dims for a single example). Throws std::invalid_argument on
// shape mismatch.
Tensor forward(const Model& model, const Tensor& inputs);

// Logits for one example given as a raw pointer of input_numel() doubles.
void forward_example(const Model& model, const double* x, double* logits_out,
                     Workspace& ws);

// Exact reverse-mode gradient of the single-example cross-entropy term.
// No regularization contribution.
GradientVector per_example_gradient(const Model& model, const double* x,
                                    int label);
GradientVector per_example_gradient(const Model& model, const Tensor& example,
                                    int label);

// Mean of per-example gradients over the batch. Summation is in example
// index order so results do not depend on thread count.
GradientVector batch_gradient(const Model& model, const Tensor& inputs,
                              std::span<const int> labels);

// Reusable buffers for batched gradient computation.
struct BatchGradScratch {
    std::vector<std::vector<double>> partials;
    std::vector<std::vector<double>> thread_flat;
    std::vector<Workspace> thread_ws;
    std::vector<double> losses;
};

namespace detail {
// Flat gradient layout: segments concatenated in model order.
std::size_t workspace_bytes_hint(const ArchSpec& spec);
// Writes the flat per-example gradient (param_count doubles) and returns
// the example loss.
double backprop_flat(const Model& model, const double* x, int label,
                     double* grad_out, Workspace& ws);
// Mean flat gradient over the given examples; per-example work may run on
// several threads but sums are folded in example index order, so the
// result is identical for any thread count. Returns the mean loss.
double batch_backprop(const Model& model, std::span<const double* const> xs,
                      std::span<const int> labels, double* mean_flat_out,
                      BatchGradScratch& scratch);
}  // namespace detail

}  // namespace gradselect
