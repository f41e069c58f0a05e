#include "gradselect/model_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gradselect {

namespace {

constexpr char kMagic[8] = {'G', 'S', 'M', 'O', 'D', 'E', 'L', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("model: truncated file");
    return v;
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("model: cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    const ArchSpec& s = model.spec();
    write_u64(out, static_cast<std::uint64_t>(s.kind));
    write_u64(out, s.input_dim);
    write_u64(out, s.hidden.size());
    for (std::size_t h : s.hidden) write_u64(out, h);
    write_u64(out, s.input_rows);
    write_u64(out, s.input_cols);
    write_u64(out, s.input_channels);
    write_u64(out, s.conv1_filters);
    write_u64(out, s.conv2_filters);
    write_u64(out, s.fc_width);
    write_u64(out, s.class_count);
    for (const auto& seg : model.segments()) {
        out.write(reinterpret_cast<const char*>(seg.values.ptr()),
                  static_cast<std::streamsize>(seg.values.numel() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("model: write failed for " + path);
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("model: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("model: bad magic in " + path);
    }
    ArchSpec s;
    s.kind = static_cast<ArchKind>(read_u64(in));
    s.input_dim = read_u64(in);
    std::size_t nh = read_u64(in);
    s.hidden.resize(nh);
    for (std::size_t i = 0; i < nh; ++i) s.hidden[i] = read_u64(in);
    s.input_rows = read_u64(in);
    s.input_cols = read_u64(in);
    s.input_channels = read_u64(in);
    s.conv1_filters = read_u64(in);
    s.conv2_filters = read_u64(in);
    s.fc_width = read_u64(in);
    s.class_count = read_u64(in);

    Model model(s);
    for (auto& seg : model.segments()) {
        in.read(reinterpret_cast<char*>(seg.values.ptr()),
                static_cast<std::streamsize>(seg.values.numel() * sizeof(double)));
        if (!in) throw std::runtime_error("model: truncated parameters in " + path);
    }
    return model;
}

}  // namespace gradselect
