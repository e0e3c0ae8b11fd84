#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "sean/common.hpp"

namespace sean {

// Flat `key = value` configuration with dotted namespaces. Every lookup is
// recorded together with the value actually used, so a run can echo its full
// effective configuration with no hidden defaults.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file: " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return from_string(ss.str(), path);
    }

    static KeyValueConfig from_string(const std::string& text, const std::string& origin = "") {
        KeyValueConfig cfg;
        std::istringstream in(text);
        std::string line;
        long line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string s = trim(line);
            if (s.empty() || s[0] == '#') continue;
            auto eq = s.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + ":" + std::to_string(line_no) +
                                  ": expected `key = value`");
            }
            std::string key = trim(s.substr(0, eq));
            std::string value = trim(s.substr(eq + 1));
            if (key.empty()) {
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            }
            cfg.values_[key] = value;
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        std::string v = it != values_.end() ? it->second : def;
        used_[key] = v;
        return v;
    }

    double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            used_[key] = format_double(def);
            return def;
        }
        char* end = nullptr;
        double v = std::strtod(it->second.c_str(), &end);
        if (end == it->second.c_str() || *end != '\0') {
            throw ConfigError("config key `" + key + "`: not a number: " + it->second);
        }
        used_[key] = it->second;
        return v;
    }

    long get_int(const std::string& key, long def) const {
        double v = get_double(key, static_cast<double>(def));
        long iv = static_cast<long>(v);
        if (static_cast<double>(iv) != v) {
            throw ConfigError("config key `" + key + "`: expected an integer");
        }
        return iv;
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            used_[key] = def ? "true" : "false";
            return def;
        }
        used_[key] = it->second;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config key `" + key + "`: expected true/false");
    }

    const std::map<std::string, std::string>& items() const { return values_; }
    const std::map<std::string, std::string>& used() const { return used_; }

    void to_file(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write config file: " + path);
        for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
    }

private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
    mutable std::map<std::string, std::string> used_;
};

}  // namespace sean
