#include "gradselect/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "gradselect/loss.hpp"
#include "gradselect/rng.hpp"

namespace gradselect {

namespace {

constexpr std::size_t kConvKernel = 5;
constexpr std::size_t kPool = 2;

struct CnnDims {
    std::size_t h1, w1;    // conv1 output
    std::size_t p1h, p1w;  // pool1 output
    std::size_t h2, w2;    // conv2 output
    std::size_t p2h, p2w;  // pool2 output
    std::size_t flat;      // fc1 input
};

CnnDims cnn_dims(const ArchSpec& s) {
    if (s.input_rows < kConvKernel || s.input_cols < kConvKernel) {
        throw std::invalid_argument("small_cnn: input smaller than kernel");
    }
    CnnDims d;
    d.h1 = s.input_rows - kConvKernel + 1;
    d.w1 = s.input_cols - kConvKernel + 1;
    d.p1h = d.h1 / kPool;
    d.p1w = d.w1 / kPool;
    if (d.p1h < kConvKernel || d.p1w < kConvKernel) {
        throw std::invalid_argument("small_cnn: input too small for second conv");
    }
    d.h2 = d.p1h - kConvKernel + 1;
    d.w2 = d.p1w - kConvKernel + 1;
    d.p2h = d.h2 / kPool;
    d.p2w = d.w2 / kPool;
    if (d.p2h == 0 || d.p2w == 0) {
        throw std::invalid_argument("small_cnn: input too small for second pool");
    }
    d.flat = s.conv2_filters * d.p2h * d.p2w;
    return d;
}

// (out_size, in_size) pairs of the fully connected stack for MLP/Linear.
std::vector<std::pair<std::size_t, std::size_t>> fc_stack(const ArchSpec& s) {
    std::vector<std::pair<std::size_t, std::size_t>> layers;
    std::size_t in = s.input_dim;
    for (std::size_t h : s.hidden) {
        layers.emplace_back(h, in);
        in = h;
    }
    layers.emplace_back(s.class_count, in);
    return layers;
}

}  // namespace

ArchSpec ArchSpec::linear(std::size_t input_dim, std::size_t classes) {
    ArchSpec s;
    s.kind = ArchKind::Linear;
    s.input_dim = input_dim;
    s.class_count = classes;
    return s;
}

ArchSpec ArchSpec::mlp(std::size_t input_dim, std::vector<std::size_t> hidden,
                       std::size_t classes) {
    ArchSpec s;
    s.kind = ArchKind::MLP;
    s.input_dim = input_dim;
    s.hidden = std::move(hidden);
    s.class_count = classes;
    return s;
}

ArchSpec ArchSpec::small_cnn(std::size_t rows, std::size_t cols,
                             std::size_t channels, std::size_t classes,
                             std::size_t conv1, std::size_t conv2,
                             std::size_t fc) {
    ArchSpec s;
    s.kind = ArchKind::SmallCNN;
    s.input_rows = rows;
    s.input_cols = cols;
    s.input_channels = channels;
    s.class_count = classes;
    s.conv1_filters = conv1;
    s.conv2_filters = conv2;
    s.fc_width = fc;
    cnn_dims(s);  // validate geometry
    return s;
}

std::size_t ArchSpec::input_numel() const {
    if (kind == ArchKind::SmallCNN) {
        return input_rows * input_cols * input_channels;
    }
    return input_dim;
}

std::size_t ArchSpec::param_count() const {
    if (class_count < 2) throw std::invalid_argument("arch: class_count < 2");
    switch (kind) {
        case ArchKind::Linear:
            return class_count * input_dim + class_count;
        case ArchKind::MLP: {
            std::size_t n = 0;
            for (auto [out, in] : fc_stack(*this)) n += out * in + out;
            return n;
        }
        case ArchKind::SmallCNN: {
            CnnDims d = cnn_dims(*this);
            std::size_t n = 0;
            n += conv1_filters * input_channels * kConvKernel * kConvKernel + conv1_filters;
            n += conv2_filters * conv1_filters * kConvKernel * kConvKernel + conv2_filters;
            n += fc_width * d.flat + fc_width;
            n += class_count * fc_width + class_count;
            return n;
        }
    }
    throw std::invalid_argument("arch: unknown kind");
}

std::string ArchSpec::name() const {
    switch (kind) {
        case ArchKind::Linear: return "linear";
        case ArchKind::MLP: {
            std::string s = "mlp";
            for (std::size_t h : hidden) s += "_" + std::to_string(h);
            return s;
        }
        case ArchKind::SmallCNN: return "smallcnn";
    }
    return "unknown";
}

std::size_t GradientVector::param_count() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.values.numel();
    return n;
}

void GradientVector::add_scaled(const GradientVector& other, double alpha) {
    if (segments.size() != other.segments.size()) {
        throw std::invalid_argument("gradient: partition mismatch");
    }
    for (std::size_t i = 0; i < segments.size(); ++i) {
        auto& a = segments[i].values;
        const auto& b = other.segments[i].values;
        if (!a.same_shape(b)) throw std::invalid_argument("gradient: shape mismatch");
        for (std::size_t j = 0; j < a.numel(); ++j) a.data[j] += alpha * b.data[j];
    }
}

void GradientVector::scale(double alpha) {
    for (auto& s : segments) {
        for (double& v : s.values.data) v *= alpha;
    }
}

void GradientVector::fill(double value) {
    for (auto& s : segments) {
        for (double& v : s.values.data) v = value;
    }
}

void GradientVector::from_flat(const double* flat) {
    std::size_t o = 0;
    for (auto& s : segments) {
        for (std::size_t i = 0; i < s.values.numel(); ++i) {
            s.values.data[i] = flat[o + i];
        }
        o += s.values.numel();
    }
}

void GradientVector::to_flat(double* flat) const {
    std::size_t o = 0;
    for (const auto& s : segments) {
        for (std::size_t i = 0; i < s.values.numel(); ++i) {
            flat[o + i] = s.values.data[i];
        }
        o += s.values.numel();
    }
}

Model::Model(const ArchSpec& spec) : spec_(spec) {
    if (spec.class_count < 2) throw std::invalid_argument("model: class_count < 2");
    switch (spec.kind) {
        case ArchKind::Linear:
        case ArchKind::MLP: {
            if (spec.input_dim == 0) throw std::invalid_argument("model: input_dim == 0");
            auto layers = fc_stack(spec);
            for (std::size_t l = 0; l < layers.size(); ++l) {
                auto [out, in] = layers[l];
                std::string base = "fc" + std::to_string(l);
                segments_.push_back({base + ".weight", static_cast<int>(l),
                                     ParamRole::weight, Tensor({out, in})});
                segments_.push_back({base + ".bias", static_cast<int>(l),
                                     ParamRole::bias, Tensor({out})});
            }
            break;
        }
        case ArchKind::SmallCNN: {
            CnnDims d = cnn_dims(spec);
            segments_.push_back({"conv1.weight", 0, ParamRole::weight,
                                 Tensor({spec.conv1_filters, spec.input_channels,
                                         kConvKernel, kConvKernel})});
            segments_.push_back({"conv1.bias", 0, ParamRole::bias,
                                 Tensor({spec.conv1_filters})});
            segments_.push_back({"conv2.weight", 1, ParamRole::weight,
                                 Tensor({spec.conv2_filters, spec.conv1_filters,
                                         kConvKernel, kConvKernel})});
            segments_.push_back({"conv2.bias", 1, ParamRole::bias,
                                 Tensor({spec.conv2_filters})});
            segments_.push_back({"fc1.weight", 2, ParamRole::weight,
                                 Tensor({spec.fc_width, d.flat})});
            segments_.push_back({"fc1.bias", 2, ParamRole::bias,
                                 Tensor({spec.fc_width})});
            segments_.push_back({"fc2.weight", 3, ParamRole::weight,
                                 Tensor({spec.class_count, spec.fc_width})});
            segments_.push_back({"fc2.bias", 3, ParamRole::bias,
                                 Tensor({spec.class_count})});
            break;
        }
    }
}

Model Model::init_random(const ArchSpec& spec, std::uint64_t seed) {
    Model m(spec);
    for (std::size_t i = 0; i < m.segments_.size(); ++i) {
        auto& seg = m.segments_[i];
        if (seg.role != ParamRole::weight) continue;
        const auto& shape = seg.values.shape;
        std::size_t fan_in, fan_out;
        if (shape.size() == 2) {  // fully connected [out, in]
            fan_out = shape[0];
            fan_in = shape[1];
        } else {  // conv [K, C, kh, kw]
            fan_out = shape[0] * shape[2] * shape[3];
            fan_in = shape[1] * shape[2] * shape[3];
        }
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        auto rng = make_rng(derive_seed(seed, i));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& v : seg.values.data) v = dist(rng);
    }
    return m;
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const auto& s : segments_) n += s.values.numel();
    return n;
}

const ParameterSegment& Model::segment(const std::string& name) const {
    for (const auto& s : segments_) {
        if (s.name == name) return s;
    }
    throw std::invalid_argument("model: no segment named " + name);
}

GradientVector Model::zero_gradient() const {
    GradientVector g;
    g.segments.reserve(segments_.size());
    for (const auto& s : segments_) {
        g.segments.push_back({s.name, s.layer_index, s.role, Tensor(s.values.shape)});
    }
    return g;
}

bool congruent(const Model& model, const GradientVector& grad) {
    const auto& segs = model.segments();
    if (segs.size() != grad.segments.size()) return false;
    for (std::size_t i = 0; i < segs.size(); ++i) {
        if (segs[i].name != grad.segments[i].name) return false;
        if (!segs[i].values.same_shape(grad.segments[i].values)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

namespace {

// act buffer layout for SmallCNN, offsets in doubles:
//   z1 a1 p1 z2 a2 p2 h logits probs
// argmax layout: pool1 winners then pool2 winners (offsets into a-planes).
struct CnnOffsets {
    CnnDims d;
    std::size_t z1, a1, p1, z2, a2, p2, h, logits, probs, total;
    std::size_t am1, am2, am_total;
};

CnnOffsets cnn_offsets(const ArchSpec& s) {
    CnnOffsets o;
    o.d = cnn_dims(s);
    std::size_t c1 = s.conv1_filters * o.d.h1 * o.d.w1;
    std::size_t q1 = s.conv1_filters * o.d.p1h * o.d.p1w;
    std::size_t c2 = s.conv2_filters * o.d.h2 * o.d.w2;
    std::size_t q2 = s.conv2_filters * o.d.p2h * o.d.p2w;
    o.z1 = 0;
    o.a1 = o.z1 + c1;
    o.p1 = o.a1 + c1;
    o.z2 = o.p1 + q1;
    o.a2 = o.z2 + c2;
    o.p2 = o.a2 + c2;
    o.h = o.p2 + q2;
    o.logits = o.h + s.fc_width;
    o.probs = o.logits + s.class_count;
    o.total = o.probs + s.class_count;
    o.am1 = 0;
    o.am2 = q1;
    o.am_total = q1 + q2;
    return o;
}

void ensure_capacity(Workspace& ws, std::size_t act, std::size_t grad,
                     std::size_t argmax) {
    if (ws.act.size() < act) ws.act.resize(act);
    if (ws.grad.size() < grad) ws.grad.resize(grad);
    if (ws.argmax.size() < argmax) ws.argmax.resize(argmax);
}

void fc_forward(const double* w, const double* b, const double* x,
                std::size_t out, std::size_t in, double* y) {
    for (std::size_t o = 0; o < out; ++o) {
        const double* wr = w + o * in;
        double acc = b[o];
        for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
        y[o] = acc;
    }
}

// 5-tap stencil helpers; the kernel width is fixed so the taps sit in
// registers and the inner loop runs along a contiguous row.
inline void stencil5_row_acc(const double* x, const double* w5, double* out,
                             std::size_t ow) {
    const double w0 = w5[0], w1 = w5[1], w2 = w5[2], w3 = w5[3], w4 = w5[4];
    for (std::size_t ox = 0; ox < ow; ++ox) {
        out[ox] += w0 * x[ox] + w1 * x[ox + 1] + w2 * x[ox + 2] + w3 * x[ox + 3] +
                   w4 * x[ox + 4];
    }
}

inline void stencil5_row_dots(const double* x, const double* d, double* acc5,
                              std::size_t ow) {
    double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0;
    for (std::size_t ox = 0; ox < ow; ++ox) {
        const double g = d[ox];
        a0 += g * x[ox];
        a1 += g * x[ox + 1];
        a2 += g * x[ox + 2];
        a3 += g * x[ox + 3];
        a4 += g * x[ox + 4];
    }
    acc5[0] += a0;
    acc5[1] += a1;
    acc5[2] += a2;
    acc5[3] += a3;
    acc5[4] += a4;
}

// conv over channel-major planes [C][h][w] -> [K][oh][ow].
void conv_forward_chw(const double* x, std::size_t h, std::size_t w,
                      std::size_t c, const double* wt, const double* bias,
                      std::size_t k_count, std::size_t oh, std::size_t ow,
                      double* out) {
    for (std::size_t k = 0; k < k_count; ++k) {
        const double* wk = wt + k * c * kConvKernel * kConvKernel;
        double* plane = out + k * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) plane[i] = bias[k];
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* xplane = x + ch * h * w;
            const double* wc = wk + ch * kConvKernel * kConvKernel;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                double* orow = plane + oy * ow;
                for (std::size_t dy = 0; dy < kConvKernel; ++dy) {
                    stencil5_row_acc(xplane + (oy + dy) * w, wc + dy * kConvKernel,
                                     orow, ow);
                }
            }
        }
    }
}

// conv over an HWC input (used for the first layer); output planes are
// channel-major [K][oh][ow]. The single-channel case runs the contiguous
// fast path above.
void conv_forward_hwc(const double* x, std::size_t h, std::size_t w,
                      std::size_t c, const double* wt, const double* bias,
                      std::size_t k_count, std::size_t oh, std::size_t ow,
                      double* out) {
    if (c == 1) {
        conv_forward_chw(x, h, w, 1, wt, bias, k_count, oh, ow, out);
        return;
    }
    for (std::size_t k = 0; k < k_count; ++k) {
        const double* wk = wt + k * c * kConvKernel * kConvKernel;
        double* plane = out + k * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = bias[k];
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* wc = wk + ch * kConvKernel * kConvKernel;
                    for (std::size_t dy = 0; dy < kConvKernel; ++dy) {
                        const double* xrow = x + ((oy + dy) * w + ox) * c + ch;
                        const double* wrow = wc + dy * kConvKernel;
                        double s = 0.0;
                        for (std::size_t dx = 0; dx < kConvKernel; ++dx) {
                            s += wrow[dx] * xrow[dx * c];
                        }
                        acc += s;
                    }
                }
                plane[oy * ow + ox] = acc;
            }
        }
    }
}

void relu(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

// 2x2 max-pool with stride 2 over channel-major planes; ties keep the
// first element in window scan order. Winner offsets (into the input
// plane array) are recorded for the backward pass.
void maxpool(const double* x, std::size_t c, std::size_t h, std::size_t w,
             std::size_t ph, std::size_t pw, double* out, int* winners) {
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = x + ch * h * w;
        for (std::size_t py = 0; py < ph; ++py) {
            for (std::size_t px = 0; px < pw; ++px) {
                std::size_t base = (2 * py) * w + 2 * px;
                double best = plane[base];
                std::size_t best_off = base;
                const std::size_t cand[3] = {base + 1, base + w, base + w + 1};
                for (std::size_t j = 0; j < 3; ++j) {
                    if (plane[cand[j]] > best) {
                        best = plane[cand[j]];
                        best_off = cand[j];
                    }
                }
                std::size_t oi = (ch * ph + py) * pw + px;
                out[oi] = best;
                winners[oi] = static_cast<int>(ch * h * w + best_off);
            }
        }
    }
}

void cnn_forward(const Model& model, const double* x, Workspace& ws,
                 const CnnOffsets& o) {
    const ArchSpec& s = model.spec();
    const auto& segs = model.segments();
    const double* w1 = segs[0].values.ptr();
    const double* b1 = segs[1].values.ptr();
    const double* w2 = segs[2].values.ptr();
    const double* b2 = segs[3].values.ptr();
    const double* wf1 = segs[4].values.ptr();
    const double* bf1 = segs[5].values.ptr();
    const double* wf2 = segs[6].values.ptr();
    const double* bf2 = segs[7].values.ptr();

    double* act = ws.act.data();
    conv_forward_hwc(x, s.input_rows, s.input_cols, s.input_channels, w1, b1,
                     s.conv1_filters, o.d.h1, o.d.w1, act + o.z1);
    relu(act + o.z1, act + o.a1, s.conv1_filters * o.d.h1 * o.d.w1);
    maxpool(act + o.a1, s.conv1_filters, o.d.h1, o.d.w1, o.d.p1h, o.d.p1w,
            act + o.p1, ws.argmax.data() + o.am1);
    conv_forward_chw(act + o.p1, o.d.p1h, o.d.p1w, s.conv1_filters, w2, b2,
                     s.conv2_filters, o.d.h2, o.d.w2, act + o.z2);
    relu(act + o.z2, act + o.a2, s.conv2_filters * o.d.h2 * o.d.w2);
    maxpool(act + o.a2, s.conv2_filters, o.d.h2, o.d.w2, o.d.p2h, o.d.p2w,
            act + o.p2, ws.argmax.data() + o.am2);
    fc_forward(wf1, bf1, act + o.p2, s.fc_width, o.d.flat, act + o.h);
    relu(act + o.h, act + o.h, s.fc_width);
    fc_forward(wf2, bf2, act + o.h, s.class_count, s.fc_width, act + o.logits);
}

// MLP act layout: a_1 .. a_L (hidden activations), then logits, probs.
struct MlpOffsets {
    std::vector<std::size_t> a;  // per hidden layer
    std::size_t logits, probs, total;
    std::size_t max_width;
};

MlpOffsets mlp_offsets(const ArchSpec& s) {
    MlpOffsets o;
    std::size_t off = 0;
    o.max_width = s.class_count;
    for (std::size_t h : s.hidden) {
        o.a.push_back(off);
        off += h;
        o.max_width = std::max(o.max_width, h);
    }
    o.logits = off;
    off += s.class_count;
    o.probs = off;
    off += s.class_count;
    o.total = off;
    return o;
}

void mlp_forward(const Model& model, const double* x, Workspace& ws,
                 const MlpOffsets& o) {
    const ArchSpec& s = model.spec();
    const auto& segs = model.segments();
    double* act = ws.act.data();
    const double* cur = x;
    std::size_t in = s.input_dim;
    for (std::size_t l = 0; l < s.hidden.size(); ++l) {
        const double* w = segs[2 * l].values.ptr();
        const double* b = segs[2 * l + 1].values.ptr();
        double* a = act + o.a[l];
        fc_forward(w, b, cur, s.hidden[l], in, a);
        relu(a, a, s.hidden[l]);
        cur = a;
        in = s.hidden[l];
    }
    std::size_t last = s.hidden.size();
    fc_forward(segs[2 * last].values.ptr(), segs[2 * last + 1].values.ptr(),
               cur, s.class_count, in, act + o.logits);
}

}  // namespace

void forward_example(const Model& model, const double* x, double* logits_out,
                     Workspace& ws) {
    const ArchSpec& s = model.spec();
    switch (s.kind) {
        case ArchKind::Linear: {
            const auto& segs = model.segments();
            fc_forward(segs[0].values.ptr(), segs[1].values.ptr(), x,
                       s.class_count, s.input_dim, logits_out);
            return;
        }
        case ArchKind::MLP: {
            MlpOffsets o = mlp_offsets(s);
            ensure_capacity(ws, o.total, 2 * o.max_width, 0);
            mlp_forward(model, x, ws, o);
            for (std::size_t i = 0; i < s.class_count; ++i) {
                logits_out[i] = ws.act[o.logits + i];
            }
            return;
        }
        case ArchKind::SmallCNN: {
            CnnOffsets o = cnn_offsets(s);
            ensure_capacity(ws, o.total, o.total, o.am_total);
            cnn_forward(model, x, ws, o);
            for (std::size_t i = 0; i < s.class_count; ++i) {
                logits_out[i] = ws.act[o.logits + i];
            }
            return;
        }
    }
    throw std::invalid_argument("forward: unknown architecture");
}

Tensor forward(const Model& model, const Tensor& inputs) {
    const std::size_t d = model.spec().input_numel();
    std::size_t n;
    if (inputs.shape.size() >= 2 &&
        shape_numel({inputs.shape.begin() + 1, inputs.shape.end()}) == d) {
        n = inputs.shape[0];
    } else if (inputs.numel() == d) {
        n = 1;
    } else {
        throw std::invalid_argument("forward: input shape does not match architecture");
    }
    Tensor logits({n, model.class_count()});
    Workspace ws;
    for (std::size_t i = 0; i < n; ++i) {
        forward_example(model, inputs.ptr() + i * d, logits.ptr() + i * model.class_count(), ws);
    }
    return logits;
}

// ---------------------------------------------------------------------------
// Backward passes
// ---------------------------------------------------------------------------

namespace {

// Flat gradient layout is the concatenation of segments in model order.
std::vector<std::size_t> segment_offsets(const Model& model) {
    std::vector<std::size_t> off;
    off.reserve(model.segments().size() + 1);
    std::size_t o = 0;
    for (const auto& s : model.segments()) {
        off.push_back(o);
        o += s.values.numel();
    }
    off.push_back(o);
    return off;
}

void fc_backward(const double* w, const double* x, const double* dy,
                 std::size_t out, std::size_t in, double* dw, double* db,
                 double* dx) {
    for (std::size_t o = 0; o < out; ++o) {
        double g = dy[o];
        double* dwr = dw + o * in;
        for (std::size_t i = 0; i < in; ++i) dwr[i] = g * x[i];
        db[o] = g;
    }
    if (dx) {
        for (std::size_t i = 0; i < in; ++i) dx[i] = 0.0;
        for (std::size_t o = 0; o < out; ++o) {
            double g = dy[o];
            const double* wr = w + o * in;
            for (std::size_t i = 0; i < in; ++i) dx[i] += g * wr[i];
        }
    }
}

double linear_backprop(const Model& model, const double* x, int label,
                       double* grad_out, Workspace& ws) {
    const ArchSpec& s = model.spec();
    ensure_capacity(ws, 2 * s.class_count, 0, 0);
    double* logits = ws.act.data();
    double* probs = logits + s.class_count;
    forward_example(const_cast<const Model&>(model), x, logits, ws);
    double loss = cross_entropy_one(logits, s.class_count, label);
    softmax(logits, probs, s.class_count);
    probs[label] -= 1.0;
    const auto& segs = model.segments();
    fc_backward(segs[0].values.ptr(), x, probs, s.class_count, s.input_dim,
                grad_out, grad_out + s.class_count * s.input_dim, nullptr);
    return loss;
}

double mlp_backprop(const Model& model, const double* x, int label,
                    double* grad_out, Workspace& ws) {
    const ArchSpec& s = model.spec();
    MlpOffsets o = mlp_offsets(s);
    ensure_capacity(ws, o.total, 2 * o.max_width, 0);
    mlp_forward(model, x, ws, o);
    double* act = ws.act.data();
    double* logits = act + o.logits;
    double loss = cross_entropy_one(logits, s.class_count, label);
    double* dcur = ws.grad.data();
    double* dprev = ws.grad.data() + o.max_width;
    softmax(logits, act + o.probs, s.class_count);
    for (std::size_t i = 0; i < s.class_count; ++i) {
        dcur[i] = act[o.probs + i];
    }
    dcur[label] -= 1.0;

    const auto& segs = model.segments();
    auto off = segment_offsets(model);
    const std::size_t last = s.hidden.size();
    for (std::size_t l = last + 1; l-- > 0;) {
        std::size_t out = (l == last) ? s.class_count : s.hidden[l];
        std::size_t in = (l == 0) ? s.input_dim : s.hidden[l - 1];
        const double* input = (l == 0) ? x : act + o.a[l - 1];
        const double* w = segs[2 * l].values.ptr();
        double* dw = grad_out + off[2 * l];
        double* db = grad_out + off[2 * l + 1];
        fc_backward(w, input, dcur, out, in, dw, db, l == 0 ? nullptr : dprev);
        if (l > 0) {
            const double* a = act + o.a[l - 1];
            for (std::size_t i = 0; i < in; ++i) {
                dprev[i] = a[i] > 0.0 ? dprev[i] : 0.0;
            }
            std::swap(dcur, dprev);
        }
    }
    return loss;
}

// dw/db for a conv layer given upstream dz and the layer input; also the
// input gradient when dx != nullptr. Layouts match the forward pass; the
// inner loops run along contiguous rows (row dot / row axpy).
void conv_backward_chw(const double* x, std::size_t h, std::size_t w,
                       std::size_t c, const double* wt, std::size_t k_count,
                       std::size_t oh, std::size_t ow, const double* dz,
                       double* dw, double* db, double* dx) {
    const std::size_t ksz = kConvKernel * kConvKernel;
    for (std::size_t k = 0; k < k_count; ++k) {
        const double* dplane = dz + k * oh * ow;
        double acc_b = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i) acc_b += dplane[i];
        db[k] = acc_b;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* xplane = x + ch * h * w;
            double* dwc = dw + (k * c + ch) * ksz;
            for (std::size_t i = 0; i < ksz; ++i) dwc[i] = 0.0;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                const double* drow = dplane + oy * ow;
                for (std::size_t dy = 0; dy < kConvKernel; ++dy) {
                    stencil5_row_dots(xplane + (oy + dy) * w, drow,
                                      dwc + dy * kConvKernel, ow);
                }
            }
        }
    }
    if (dx) {
        // Input gradient as a full correlation: pad each dz row with
        // kernel-1 zeros per side and run the reversed taps along it.
        for (std::size_t i = 0; i < c * h * w; ++i) dx[i] = 0.0;
        const std::size_t pad = kConvKernel - 1;
        std::vector<double> dzpad(ow + 2 * pad, 0.0);
        double wrev[kConvKernel * kConvKernel];
        for (std::size_t k = 0; k < k_count; ++k) {
            const double* dplane = dz + k * oh * ow;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double* wc = wt + (k * c + ch) * ksz;
                for (std::size_t dy = 0; dy < kConvKernel; ++dy) {
                    for (std::size_t t = 0; t < kConvKernel; ++t) {
                        wrev[dy * kConvKernel + t] = wc[dy * kConvKernel + (pad - t)];
                    }
                }
                double* dxplane = dx + ch * h * w;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    for (std::size_t j = 0; j < ow; ++j) {
                        dzpad[pad + j] = dplane[oy * ow + j];
                    }
                    for (std::size_t dy = 0; dy < kConvKernel; ++dy) {
                        stencil5_row_acc(dzpad.data(), wrev + dy * kConvKernel,
                                         dxplane + (oy + dy) * w, w);
                    }
                }
            }
        }
    }
}

// conv1 weight gradient against the HWC input (input gradient not needed).
void conv_backward_hwc_weights(const double* x, std::size_t h, std::size_t w,
                               std::size_t c, std::size_t k_count,
                               std::size_t oh, std::size_t ow, const double* dz,
                               double* dw, double* db) {
    if (c == 1) {
        conv_backward_chw(x, h, w, 1, nullptr, k_count, oh, ow, dz, dw, db, nullptr);
        return;
    }
    const std::size_t ksz = kConvKernel * kConvKernel;
    for (std::size_t k = 0; k < k_count; ++k) {
        const double* dplane = dz + k * oh * ow;
        double acc_b = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i) acc_b += dplane[i];
        db[k] = acc_b;
        for (std::size_t ch = 0; ch < c; ++ch) {
            double* dwc = dw + (k * c + ch) * ksz;
            for (std::size_t dy = 0; dy < kConvKernel; ++dy) {
                for (std::size_t dx = 0; dx < kConvKernel; ++dx) {
                    double acc = 0.0;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const double* xrow = x + ((oy + dy) * w + dx) * c + ch;
                        const double* drow = dplane + oy * ow;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            acc += drow[ox] * xrow[ox * c];
                        }
                    }
                    dwc[dy * kConvKernel + dx] = acc;
                }
            }
        }
    }
}

double cnn_backprop(const Model& model, const double* x, int label,
                    double* grad_out, Workspace& ws) {
    const ArchSpec& s = model.spec();
    CnnOffsets o = cnn_offsets(s);
    ensure_capacity(ws, o.total, o.total, o.am_total);
    cnn_forward(model, x, ws, o);
    double* act = ws.act.data();
    double* gbuf = ws.grad.data();
    const int* am = ws.argmax.data();
    double loss = cross_entropy_one(act + o.logits, s.class_count, label);

    const auto& segs = model.segments();
    auto off = segment_offsets(model);
    const double* w2 = segs[2].values.ptr();
    const double* wf1 = segs[4].values.ptr();
    const double* wf2 = segs[6].values.ptr();

    // dlogits (reuse the probs slot of the grad buffer space)
    double* dlogits = gbuf + o.logits;
    softmax(act + o.logits, dlogits, s.class_count);
    dlogits[label] -= 1.0;

    // fc2
    double* dh = gbuf + o.h;
    fc_backward(wf2, act + o.h, dlogits, s.class_count, s.fc_width,
                grad_out + off[6], grad_out + off[7], dh);
    for (std::size_t i = 0; i < s.fc_width; ++i) {
        dh[i] = act[o.h + i] > 0.0 ? dh[i] : 0.0;
    }

    // fc1
    double* dp2 = gbuf + o.p2;
    fc_backward(wf1, act + o.p2, dh, s.fc_width, o.d.flat,
                grad_out + off[4], grad_out + off[5], dp2);

    // unpool2 then relu mask -> dz2
    double* dz2 = gbuf + o.z2;
    const std::size_t c2n = s.conv2_filters * o.d.h2 * o.d.w2;
    for (std::size_t i = 0; i < c2n; ++i) dz2[i] = 0.0;
    const std::size_t q2 = s.conv2_filters * o.d.p2h * o.d.p2w;
    for (std::size_t i = 0; i < q2; ++i) dz2[am[o.am2 + i]] += dp2[i];
    for (std::size_t i = 0; i < c2n; ++i) {
        if (act[o.z2 + i] <= 0.0) dz2[i] = 0.0;
    }

    // conv2
    double* dp1 = gbuf + o.p1;
    conv_backward_chw(act + o.p1, o.d.p1h, o.d.p1w, s.conv1_filters, w2,
                      s.conv2_filters, o.d.h2, o.d.w2, dz2,
                      grad_out + off[2], grad_out + off[3], dp1);

    // unpool1 then relu mask -> dz1
    double* dz1 = gbuf + o.z1;
    const std::size_t c1n = s.conv1_filters * o.d.h1 * o.d.w1;
    for (std::size_t i = 0; i < c1n; ++i) dz1[i] = 0.0;
    const std::size_t q1 = s.conv1_filters * o.d.p1h * o.d.p1w;
    for (std::size_t i = 0; i < q1; ++i) dz1[am[o.am1 + i]] += dp1[i];
    for (std::size_t i = 0; i < c1n; ++i) {
        if (act[o.z1 + i] <= 0.0) dz1[i] = 0.0;
    }

    // conv1 (no input gradient needed)
    conv_backward_hwc_weights(x, s.input_rows, s.input_cols, s.input_channels,
                              s.conv1_filters, o.d.h1, o.d.w1, dz1,
                              grad_out + off[0], grad_out + off[1]);
    return loss;
}

}  // namespace

namespace detail {

std::size_t workspace_bytes_hint(const ArchSpec& spec) {
    if (spec.kind == ArchKind::SmallCNN) {
        return cnn_offsets(spec).total * 2 * sizeof(double);
    }
    return 4 * spec.param_count() * sizeof(double);
}

double backprop_flat(const Model& model, const double* x, int label,
                     double* grad_out, Workspace& ws) {
    if (label < 0 || static_cast<std::size_t>(label) >= model.class_count()) {
        throw std::invalid_argument("gradient: label out of range");
    }
    switch (model.spec().kind) {
        case ArchKind::Linear: return linear_backprop(model, x, label, grad_out, ws);
        case ArchKind::MLP: return mlp_backprop(model, x, label, grad_out, ws);
        case ArchKind::SmallCNN: return cnn_backprop(model, x, label, grad_out, ws);
    }
    throw std::invalid_argument("gradient: unknown architecture");
}

}  // namespace detail

GradientVector per_example_gradient(const Model& model, const double* x,
                                    int label) {
    std::vector<double> flat(model.param_count());
    Workspace ws;
    detail::backprop_flat(model, x, label, flat.data(), ws);
    GradientVector g = model.zero_gradient();
    g.from_flat(flat.data());
    return g;
}

GradientVector per_example_gradient(const Model& model, const Tensor& example,
                                    int label) {
    if (example.numel() != model.spec().input_numel()) {
        throw std::invalid_argument("gradient: example shape mismatch");
    }
    return per_example_gradient(model, example.ptr(), label);
}

GradientVector batch_gradient(const Model& model, const Tensor& inputs,
                              std::span<const int> labels) {
    const std::size_t d = model.spec().input_numel();
    std::size_t n;
    if (inputs.shape.size() >= 2 &&
        shape_numel({inputs.shape.begin() + 1, inputs.shape.end()}) == d) {
        n = inputs.shape[0];
    } else if (inputs.numel() == d) {
        n = 1;
    } else {
        throw std::invalid_argument("batch_gradient: input shape mismatch");
    }
    if (n == 0 || labels.size() != n) {
        throw std::invalid_argument("batch_gradient: empty batch or label mismatch");
    }
    std::vector<const double*> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = inputs.ptr() + i * d;

    std::vector<double> mean_flat(model.param_count());
    BatchGradScratch scratch;
    detail::batch_backprop(model, xs, labels, mean_flat.data(), scratch);
    GradientVector g = model.zero_gradient();
    g.from_flat(mean_flat.data());
    return g;
}

}  // namespace gradselect
