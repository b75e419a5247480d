#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cdm {

// Flat key = value text config with dotted keys. Lines starting with '#' (or
// the tail of a line after " #") are comments. The first entry must be
// format.version = 1.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_text(const std::string& text, const std::string& origin);

    // Applies a "key=value" override (the CLI --set form).
    void set_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;
    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // Comma-separated list of non-negative integers.
    std::vector<std::size_t> get_id_list(const std::string& key) const;

    // Sorted "key = value" lines; the identity used for hashing.
    std::string canonical() const;
    // 16-hex-digit FNV-1a over canonical() with out.* keys excluded, so moving
    // the output directory does not change artifact identity.
    std::string hash_hex() const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace cdm
