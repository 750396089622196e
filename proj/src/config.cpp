#include "flowgen/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "flowgen/tensor.hpp"

namespace flowgen {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_text(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t[0] == '[') {
            require(t.back() == ']' && t.size() > 2,
                    "config: bad section header at line " + std::to_string(lineno));
            section = trim(t.substr(1, t.size() - 2));
            require(!section.empty(), "config: empty section name at line " + std::to_string(lineno));
            continue;
        }
        size_t eq = t.find('=');
        require(eq != std::string::npos, "config: expected key=value at line " + std::to_string(lineno));
        std::string key = trim(t.substr(0, eq));
        require(!key.empty(), "config: empty key at line " + std::to_string(lineno));
        std::string full = section.empty() ? key : section + "." + key;
        cfg.values[full] = trim(t.substr(eq + 1));
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str());
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

std::string Config::require_str(const std::string& key) const {
    auto it = values.find(key);
    require(it != values.end(), "config: missing required key '" + key + "'");
    return it->second;
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    const char* s = it->second.c_str();
    char* end = nullptr;
    long long v = std::strtoll(s, &end, 10);
    require(end != s && *end == '\0', "config: '" + key + "' is not an integer: '" + it->second + "'");
    return v;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    const char* s = it->second.c_str();
    char* end = nullptr;
    double v = std::strtod(s, &end);
    require(end != s && *end == '\0', "config: '" + key + "' is not a number: '" + it->second + "'");
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    arg_error("config: '" + key + "' is not a boolean: '" + v + "'");
}

}  // namespace flowgen
