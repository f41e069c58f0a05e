#include "gradselect/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "gradselect/rng.hpp"

namespace gradselect {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("idx: truncated " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Tensor Dataset::batch_tensor() const {
    std::vector<std::size_t> shape;
    shape.push_back(size());
    shape.insert(shape.end(), example_shape.begin(), example_shape.end());
    return Tensor(std::move(shape), features);
}

Tensor Dataset::example_tensor(std::size_t i) const {
    const std::size_t d = example_dim();
    return Tensor(example_shape,
                  std::vector<double>(features.begin() + i * d,
                                      features.begin() + (i + 1) * d));
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.example_shape = example_shape;
    out.class_count = class_count;
    out.source_id = source_id;
    const std::size_t d = example_dim();
    out.features.reserve(rows.size() * d);
    out.labels.reserve(rows.size());
    out.orig_indices.reserve(rows.size());
    for (std::size_t r : rows) {
        if (r >= size()) throw std::invalid_argument("dataset: subset index out of range");
        out.features.insert(out.features.end(), features.begin() + r * d,
                            features.begin() + (r + 1) * d);
        out.labels.push_back(labels[r]);
        out.orig_indices.push_back(orig_indices.empty() ? r : orig_indices[r]);
    }
    return out;
}

void Dataset::validate() const {
    if (class_count < 2) throw std::invalid_argument("dataset: class_count < 2");
    if (features.size() != size() * example_dim()) {
        throw std::invalid_argument("dataset: feature buffer size mismatch");
    }
    for (int y : labels) {
        if (y < 0 || y >= class_count) {
            throw std::invalid_argument("dataset: label out of range");
        }
    }
    if (!orig_indices.empty() && orig_indices.size() != size()) {
        throw std::invalid_argument("dataset: orig_indices size mismatch");
    }
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("idx: cannot open " + images_path);
    std::uint32_t magic = read_be32(img, "image magic");
    if (magic != kImagesMagic) {
        throw std::runtime_error("idx: bad image magic in " + images_path);
    }
    std::uint32_t n = read_be32(img, "image count");
    std::uint32_t rows = read_be32(img, "row count");
    std::uint32_t cols = read_be32(img, "col count");
    const std::size_t npix = std::size_t(n) * rows * cols;
    std::vector<unsigned char> pixels(npix);
    img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(npix));
    if (static_cast<std::size_t>(img.gcount()) != npix) {
        throw std::runtime_error("idx: truncated pixel data in " + images_path);
    }

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);
    std::uint32_t lmagic = read_be32(lab, "label magic");
    if (lmagic != kLabelsMagic) {
        throw std::runtime_error("idx: bad label magic in " + labels_path);
    }
    std::uint32_t ln = read_be32(lab, "label count");
    if (ln != n) {
        throw std::runtime_error("idx: image/label count mismatch (" +
                                 std::to_string(n) + " vs " + std::to_string(ln) + ")");
    }
    std::vector<unsigned char> raw_labels(n);
    lab.read(reinterpret_cast<char*>(raw_labels.data()), n);
    if (static_cast<std::size_t>(lab.gcount()) != n) {
        throw std::runtime_error("idx: truncated label data in " + labels_path);
    }

    Dataset ds;
    ds.example_shape = {rows, cols, 1};
    ds.features.resize(npix);
    for (std::size_t i = 0; i < npix; ++i) {
        ds.features[i] = static_cast<double>(pixels[i]) / 255.0;
    }
    ds.labels.assign(raw_labels.begin(), raw_labels.end());
    int max_label = 0;
    for (int y : ds.labels) max_label = std::max(max_label, y);
    ds.class_count = std::max(max_label + 1, 2);
    ds.source_id = images_path;
    return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path) {
    if (ds.example_shape.size() != 3) {
        throw std::invalid_argument("idx: dataset examples are not HxWxC images");
    }
    if (ds.example_shape[2] != 1) {
        throw std::invalid_argument("idx: only single-channel images supported");
    }
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("idx: cannot write " + images_path);
    write_be32(img, kImagesMagic);
    write_be32(img, static_cast<std::uint32_t>(ds.size()));
    write_be32(img, static_cast<std::uint32_t>(ds.example_shape[0]));
    write_be32(img, static_cast<std::uint32_t>(ds.example_shape[1]));
    std::vector<unsigned char> buf(ds.features.size());
    for (std::size_t i = 0; i < ds.features.size(); ++i) {
        double v = ds.features[i] * 255.0;
        long b = std::lround(v);
        if (b < 0 || b > 255) throw std::runtime_error("idx: pixel out of [0,1] range");
        buf[i] = static_cast<unsigned char>(b);
    }
    img.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));

    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx: cannot write " + labels_path);
    write_be32(lab, kLabelsMagic);
    write_be32(lab, static_cast<std::uint32_t>(ds.size()));
    std::vector<unsigned char> lbuf(ds.labels.begin(), ds.labels.end());
    lab.write(reinterpret_cast<const char*>(lbuf.data()),
              static_cast<std::streamsize>(lbuf.size()));
}

Dataset load_csv(const std::string& path, int class_count) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("csv: empty file " + path);
    if (line.rfind("label", 0) != 0) {
        throw std::runtime_error("csv: missing header in " + path);
    }
    std::size_t dim = std::count(line.begin(), line.end(), ',');
    if (dim == 0) throw std::runtime_error("csv: header has no feature columns");

    Dataset ds;
    ds.example_shape = {dim};
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const char* p = line.c_str();
        char* end = nullptr;
        long label = std::strtol(p, &end, 10);
        if (end == p) {
            throw std::runtime_error("csv: bad label at line " + std::to_string(line_no));
        }
        p = end;
        ds.labels.push_back(static_cast<int>(label));
        for (std::size_t j = 0; j < dim; ++j) {
            if (*p != ',') {
                throw std::runtime_error("csv: expected " + std::to_string(dim) +
                                         " features at line " + std::to_string(line_no));
            }
            ++p;
            double v = std::strtod(p, &end);
            if (end == p) {
                throw std::runtime_error("csv: bad value at line " + std::to_string(line_no));
            }
            p = end;
            ds.features.push_back(v);
        }
    }
    int max_label = 0;
    for (int y : ds.labels) max_label = std::max(max_label, y);
    ds.class_count = class_count > 0 ? class_count : std::max(max_label + 1, 2);
    ds.source_id = path;
    ds.validate();
    return ds;
}

void write_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("csv: cannot write " + path);
    const std::size_t d = ds.example_dim();
    out << "label";
    for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
    out << "\n";
    char buf[32];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << ds.labels[i];
        const double* x = ds.example(i);
        for (std::size_t j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", x[j]);
            out << ',' << buf;
        }
        out << "\n";
    }
}

std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
    if (spec.val_fraction < 0.0 || spec.val_fraction >= 1.0) {
        throw std::invalid_argument("split: val_fraction outside [0,1)");
    }
    const std::size_t n = ds.size();
    const std::size_t n_val =
        static_cast<std::size_t>(std::lround(spec.val_fraction * static_cast<double>(n)));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    auto rng = make_rng(spec.seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> val_rows(perm.begin(), perm.begin() + n_val);
    std::vector<std::size_t> train_rows(perm.begin() + n_val, perm.end());
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(train_rows.begin(), train_rows.end());
    return {ds.subset(train_rows), ds.subset(val_rows)};
}

SynthSpec SynthSpec::redundant(int classes, std::size_t dim, std::size_t n,
                               std::uint64_t seed) {
    SynthSpec s;
    s.kind = SynthKind::Redundant;
    s.class_count = classes;
    s.dim = dim;
    s.n = n;
    s.seed = seed;
    s.within_class_spread = 0.05;
    s.modes_per_class = 2;
    return s;
}

SynthSpec SynthSpec::diverse(int classes, std::size_t dim, std::size_t n,
                             std::uint64_t seed) {
    SynthSpec s;
    s.kind = SynthKind::Diverse;
    s.class_count = classes;
    s.dim = dim;
    s.n = n;
    s.seed = seed;
    s.within_class_spread = 0.5;
    s.modes_per_class = 16;
    return s;
}

namespace {

// Seeded mode layout shared by train and test draws.
struct SynthModes {
    std::vector<double> centers;  // [class][mode][dim]
    std::size_t modes_per_class;
};

SynthModes make_modes(const SynthSpec& spec) {
    if (spec.class_count < 2 || spec.dim == 0 || spec.modes_per_class == 0) {
        throw std::invalid_argument("synth: invalid spec");
    }
    if (spec.within_class_spread <= 0.0) {
        throw std::invalid_argument("synth: spread must be positive");
    }
    const std::size_t c = static_cast<std::size_t>(spec.class_count);
    SynthModes m;
    m.modes_per_class = spec.modes_per_class;
    m.centers.resize(c * spec.modes_per_class * spec.dim);

    auto rng = make_rng(derive_seed(spec.seed, 0xC0));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    if (spec.kind == SynthKind::Redundant) {
        // Class centroids kept >= 10x spread apart; modes huddle nearby.
        const double min_sep = 10.0 * spec.within_class_spread;
        std::vector<double> centroids(c * spec.dim);
        for (std::size_t ci = 0; ci < c; ++ci) {
            for (int attempt = 0; attempt < 1000; ++attempt) {
                for (std::size_t j = 0; j < spec.dim; ++j) {
                    centroids[ci * spec.dim + j] = unit(rng);
                }
                bool ok = true;
                for (std::size_t prev = 0; prev < ci && ok; ++prev) {
                    double d2 = 0.0;
                    for (std::size_t j = 0; j < spec.dim; ++j) {
                        double diff = centroids[ci * spec.dim + j] -
                                      centroids[prev * spec.dim + j];
                        d2 += diff * diff;
                    }
                    ok = d2 >= min_sep * min_sep;
                }
                if (ok) break;
                if (attempt == 999) {
                    throw std::invalid_argument(
                        "synth: cannot separate class centroids; raise dim or lower spread");
                }
            }
        }
        std::uniform_real_distribution<double> off(-3.0 * spec.within_class_spread,
                                                   3.0 * spec.within_class_spread);
        for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t mi = 0; mi < spec.modes_per_class; ++mi) {
                double* center = m.centers.data() + (ci * spec.modes_per_class + mi) * spec.dim;
                for (std::size_t j = 0; j < spec.dim; ++j) {
                    center[j] = centroids[ci * spec.dim + j] + off(rng);
                }
            }
        }
    } else {
        // Diverse: modes land anywhere, classes interleave freely.
        for (double& v : m.centers) v = unit(rng);
    }
    return m;
}

Dataset draw_points(const SynthSpec& spec, const SynthModes& modes,
                    std::size_t n, std::mt19937_64& rng, const char* tag) {
    const std::size_t c = static_cast<std::size_t>(spec.class_count);
    if (n < c) throw std::invalid_argument("synth: n < class_count");
    std::normal_distribution<double> noise(0.0, spec.within_class_spread);

    Dataset ds;
    ds.example_shape = {spec.dim};
    ds.class_count = spec.class_count;
    ds.source_id = std::string("synth:") +
                   (spec.kind == SynthKind::Redundant ? "redundant" : "diverse") +
                   ":" + tag;
    ds.features.resize(n * spec.dim);
    ds.labels.resize(n);

    // Balanced classes, remainder to the lowest class indices; points split
    // evenly over a class's modes.
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < c; ++ci) {
        std::size_t count = n / c + (ci < n % c ? 1 : 0);
        for (std::size_t k = 0; k < count; ++k, ++row) {
            std::size_t mi = k % modes.modes_per_class;
            const double* center =
                modes.centers.data() + (ci * modes.modes_per_class + mi) * spec.dim;
            double* x = ds.features.data() + row * spec.dim;
            for (std::size_t j = 0; j < spec.dim; ++j) x[j] = center[j] + noise(rng);
            ds.labels[row] = static_cast<int>(ci);
        }
    }

    // Shuffle rows so class blocks do not line up with example indices.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    std::shuffle(perm.begin(), perm.end(), rng);
    Dataset shuffled = ds.subset(perm);
    shuffled.orig_indices.clear();  // fresh dataset, not a split view
    shuffled.source_id = ds.source_id;
    return shuffled;
}

}  // namespace

Dataset synth(const SynthSpec& spec) {
    SynthModes modes = make_modes(spec);
    auto rng = make_rng(derive_seed(spec.seed, 0xD1));
    return draw_points(spec, modes, spec.n, rng, "train");
}

std::pair<Dataset, Dataset> synth_train_test(const SynthSpec& spec,
                                             std::size_t test_n) {
    SynthModes modes = make_modes(spec);
    auto rng = make_rng(derive_seed(spec.seed, 0xD1));
    Dataset train = draw_points(spec, modes, spec.n, rng, "train");
    auto test_rng = make_rng(derive_seed(spec.seed, 0xD2));
    Dataset test = draw_points(spec, modes, test_n, test_rng, "test");
    return {std::move(train), std::move(test)};
}

std::string default_data_dir() {
    const char* env = std::getenv("DATA_DIR");
    if (env && *env) return env;
    return "data";
}

}  // namespace gradselect
