#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace flowgen {

// Line-oriented key=value file with [section] headers. Keys are addressed as
// "section.key" (bare keys before any header keep their own name). '#' lines
// are comments; later duplicates win so command-line overrides can be layered
// on top.
struct Config {
    std::map<std::string, std::string> values;

    static Config parse_text(const std::string& text);
    static Config parse_file(const std::string& path);

    bool has(const std::string& key) const { return values.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values[key] = value; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::string require_str(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
};

}  // namespace flowgen
