#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gradselect {

// Flat key=value configuration with dotted section prefixes, e.g.
// "train.lr=0.05". Lines starting with '#' and blank lines are skipped.
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig from_file(const std::string& path);
    static KvConfig from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
    std::vector<double> get_double_list(const std::string& key) const;
    std::vector<std::int64_t> get_int_list(const std::string& key) const;
    std::vector<std::string> get_string_list(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }
    // Serialized back to the same flat format (sorted by key).
    std::string to_string() const;

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace gradselect
