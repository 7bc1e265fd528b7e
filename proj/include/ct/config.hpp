#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ct/errors.hpp"

// Key-value text configuration: `key = value` lines, '#' comments. The config
// file is the source of truth; CLI flags override individual keys and the
// resolved merge is snapshotted next to every run's outputs.

namespace ct {

class Config {
public:
    Config() = default;

    static Config load(const std::filesystem::path& path);
    static Config from_string(const std::string& text);

    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get(const std::string& key) const;  // ConfigError when missing
    std::string get_or(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::int64_t get_i64(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& key,
                                      const std::vector<std::string>& fallback) const;

    // FNV-1a over the sorted canonical "key=value" form; names run files.
    std::string hash() const;
    // Deterministic snapshot (sorted keys), suitable for byte-compare.
    void save(const std::filesystem::path& path) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace ct
