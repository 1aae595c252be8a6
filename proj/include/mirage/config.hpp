#ifndef MIRAGE_CONFIG_HPP
#define MIRAGE_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mirage/error.hpp"

namespace mirage {

// Line-oriented `key = value` configuration. `#` starts a comment, blank
// lines are ignored, keys may be dotted (`train.steps`). Duplicate keys are
// rejected so a typo cannot silently shadow an earlier setting.
class Config {
  public:
    Config() = default;

    static Config parse(const std::string& text, const std::string& origin = "<string>") {
        Config cfg;
        cfg.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string stripped = strip(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + ":" + std::to_string(line_no) +
                                  ": expected `key = value`, got: " + stripped);
            }
            const std::string key = strip(stripped.substr(0, eq));
            const std::string value = strip(stripped.substr(eq + 1));
            if (key.empty()) {
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            }
            if (cfg.values_.count(key)) {
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key `" +
                                  key + "`");
            }
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str(), path.string());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    const std::string& require(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            throw ConfigError(origin_ + ": missing required key `" + key + "`");
        }
        return it->second;
    }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    long long get_int(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : to_int(key, it->second);
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const std::uint64_t v = std::stoull(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": key `" + key + "`: expected unsigned integer, got `" +
                              it->second + "`");
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": key `" + key + "`: expected number, got `" +
                              it->second + "`");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        throw ConfigError(origin_ + ": key `" + key + "`: expected boolean, got `" + it->second +
                          "`");
    }

    long long require_int(const std::string& key) const { return to_int(key, require(key)); }

    // Keys in sorted order; canonical form for hashing and round-tripping.
    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        out.reserve(values_.size());
        for (const auto& [k, _] : values_) out.push_back(k);
        return out;
    }

    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values_) {
            out += k;
            out += " = ";
            out += v;
            out += "\n";
        }
        return out;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    const std::string& origin() const { return origin_; }

  private:
    static std::string strip(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
        while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
        return s.substr(b, e - b);
    }

    long long to_int(const std::string& key, const std::string& raw) const {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(raw, &used);
            if (used != raw.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": key `" + key + "`: expected integer, got `" + raw +
                              "`");
        }
    }

    std::string origin_ = "<empty>";
    std::map<std::string, std::string> values_;
};

}  // namespace mirage

#endif  // MIRAGE_CONFIG_HPP
