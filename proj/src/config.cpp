#include "revdeblur/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rvd {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::from_string(const std::string& text) {
    Config c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
        c.kv_[key] = value;
    }
    return c;
}

Config Config::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_string(ss.str());
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stoll(it->second);
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stod(it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), ::tolower);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw std::runtime_error("config key '" + key + "': not a boolean: " + it->second);
}

std::vector<int> Config::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<int> out;
    std::istringstream is(it->second);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(trim(tok)));
    return out;
}

std::vector<double> Config::get_double_list(const std::string& key, const std::vector<double>& fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<double> out;
    std::istringstream is(it->second);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stod(trim(tok)));
    return out;
}

std::vector<std::string> Config::unknown_keys(const std::vector<std::string>& known) const {
    std::vector<std::string> out;
    for (const auto& [k, _] : kv_)
        if (std::find(known.begin(), known.end(), k) == known.end()) out.push_back(k);
    return out;
}

}  // namespace rvd
