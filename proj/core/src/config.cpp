#include "cdm/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cdm/errors.hpp"
#include "cdm/rng.hpp"

namespace cdm {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool valid_key(const std::string& key) {
    if (key.empty()) return false;
    for (char c : key) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) {
            return false;
        }
    }
    return true;
}

}  // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_text(text.str(), path);
}

Config Config::parse_text(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                              ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!valid_key(key)) {
            throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                              ": bad key '" + key + "'");
        }
        if (value.empty()) {
            throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                              ": empty value for key '" + key + "'");
        }
        if (cfg.kv_.count(key)) {
            throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                              ": duplicate key '" + key + "'");
        }
        cfg.kv_[key] = value;
    }
    if (cfg.get_str("format.version", "") != "1") {
        throw ConfigError("config: " + origin + ": missing or unsupported format.version "
                          "(expected 1)");
    }
    return cfg;
}

void Config::set_override(const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("config: override '" + assignment + "' is not key=value");
    }
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) {
    if (!valid_key(key)) throw ConfigError("config: bad key '" + key + "'");
    if (value.empty()) throw ConfigError("config: empty value for key '" + key + "'");
    kv_[key] = value;
}

bool Config::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string Config::get_str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("config: missing key '" + key + "'");
    return it->second;
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "': cannot parse '" + it->second +
                          "' as number");
    }
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(it->second, &pos);
        if (pos != it->second.size() || v < 0) throw std::invalid_argument("range");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "': cannot parse '" + it->second +
                          "' as non-negative integer");
    }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "': cannot parse '" + it->second +
                          "' as unsigned integer");
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: key '" + key + "': cannot parse '" + v + "' as bool");
}

std::vector<std::size_t> Config::get_id_list(const std::string& key) const {
    std::vector<std::size_t> out;
    auto it = kv_.find(key);
    if (it == kv_.end()) return out;
    std::istringstream in(it->second);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(tok, &pos);
            if (pos != tok.size() || v < 0) throw std::invalid_argument("range");
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "': bad id '" + tok + "'");
        }
    }
    return out;
}

std::string Config::canonical() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv_) out << k << " = " << v << "\n";
    return out.str();
}

std::string Config::hash_hex() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv_) {
        if (k.rfind("out.", 0) == 0) continue;
        out << k << " = " << v << "\n";
    }
    const std::uint64_t h = fnv1a64(out.str());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace cdm
