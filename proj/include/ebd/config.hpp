#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebd {

/// Flat key-value configuration (TOML-compatible subset: `key = value` lines,
/// `#` comments, quoted strings, numbers, booleans; no tables or arrays).
/// CLI flags override file keys by writing into the same map.
class RunConfig {
public:
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback = "") const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end() || it->second.empty())
            throw std::invalid_argument("config: missing required key '" + key + "'");
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return parse_double(key, it->second);
    }

    long long get_int(const std::string& key, long long fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::size_t pos = 0;
        long long v = 0;
        try {
            v = std::stoll(it->second, &pos);
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' is not an integer: " + it->second);
        }
        if (pos != it->second.size())
            throw std::invalid_argument("config: key '" + key + "' is not an integer: " + it->second);
        return v;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        throw std::invalid_argument("config: key '" + key + "' is not a boolean: " + it->second);
    }

    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stoull(it->second);
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' is not a seed: " + it->second);
        }
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

    /// FNV-1a over the sorted canonical "key=value\n" serialization; stable
    /// across key ordering in the source file.
    std::uint64_t hash() const {
        std::uint64_t h = 14695981039346656037ULL;
        const auto mix = [&](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 1099511628211ULL;
            }
        };
        for (const auto& [k, v] : values_) {   // std::map iterates in sorted key order
            mix(k);
            mix("=");
            mix(v);
            mix("\n");
        }
        return h;
    }

    std::string hash_hex() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
        return buf;
    }

    static RunConfig parse(std::istream& in, const std::string& source = "<config>") {
        RunConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string stripped = strip(strip_comment(line));
            if (stripped.empty()) continue;
            const std::size_t eq = stripped.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument(source + ":" + std::to_string(lineno) +
                                            ": expected 'key = value'");
            const std::string key = strip(stripped.substr(0, eq));
            std::string value = strip(stripped.substr(eq + 1));
            if (key.empty() || !valid_key(key))
                throw std::invalid_argument(source + ":" + std::to_string(lineno) +
                                            ": invalid key '" + key + "'");
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
                value = value.substr(1, value.size() - 2);
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::invalid_argument("config: cannot open file: " + path);
        return parse(in, path);
    }

private:
    static std::string strip(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }
    static std::string strip_comment(const std::string& s) {
        bool quoted = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') quoted = !quoted;
            else if (s[i] == '#' && !quoted) return s.substr(0, i);
        }
        return s;
    }
    static bool valid_key(const std::string& k) {
        for (char c : k)
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
                return false;
        return true;
    }
    static double parse_double(const std::string& key, const std::string& s) {
        std::size_t pos = 0;
        double v = 0;
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' is not a number: " + s);
        }
        if (pos != s.size())
            throw std::invalid_argument("config: key '" + key + "' is not a number: " + s);
        return v;
    }

    std::map<std::string, std::string> values_;
};

} // namespace ebd
