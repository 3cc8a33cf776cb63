#pragma once

#include <map>
#include <string>
#include <vector>

namespace rvd {

// Flat key=value configuration text; '#' starts a comment, blank lines are
// skipped. Unknown keys are reported so typos fail loudly.
class Config {
public:
    static Config from_string(const std::string& text);
    static Config load(const std::string& path);

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
    std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) const;

    // keys present in the file but never listed in `known`
    std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const;

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace rvd
