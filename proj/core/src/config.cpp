#include "gradselect/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gradselect {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
}

KvConfig KvConfig::from_string(const std::string& text) {
    KvConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config: missing '=' at line " +
                                     std::to_string(line_no) + ": " + line);
        }
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void KvConfig::set(const std::string& key, const std::string& value) {
    entries_[key] = value;
}

bool KvConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    char* end = nullptr;
    double v = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0') {
        throw std::runtime_error("config: bad number for " + key + ": " + it->second);
    }
    return v;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    char* end = nullptr;
    long long v = std::strtoll(it->second.c_str(), &end, 10);
    if (end == it->second.c_str() || *end != '\0') {
        throw std::runtime_error("config: bad integer for " + key + ": " + it->second);
    }
    return v;
}

std::uint64_t KvConfig::get_seed(const std::string& key, std::uint64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    char* end = nullptr;
    unsigned long long v = std::strtoull(it->second.c_str(), &end, 10);
    if (end == it->second.c_str() || *end != '\0') {
        throw std::runtime_error("config: bad seed for " + key + ": " + it->second);
    }
    return v;
}

std::vector<double> KvConfig::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split_commas(get(key, ""))) {
        out.push_back(std::strtod(item.c_str(), nullptr));
    }
    return out;
}

std::vector<std::int64_t> KvConfig::get_int_list(const std::string& key) const {
    std::vector<std::int64_t> out;
    for (const auto& item : split_commas(get(key, ""))) {
        out.push_back(std::strtoll(item.c_str(), nullptr, 10));
    }
    return out;
}

std::vector<std::string> KvConfig::get_string_list(const std::string& key) const {
    return split_commas(get(key, ""));
}

std::string KvConfig::to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

}  // namespace gradselect
