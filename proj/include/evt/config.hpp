#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "evt/errors.hpp"

namespace evt {

// Flat key=value text with [section] headers; section names prefix the keys
// ("train.lr"). Consumers mark keys as they read them so anything left over
// can be rejected as a typo.
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text, const std::string& origin = "<config>");
    static Config from_file(const std::string& path);

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& def) const;
    int get_int(const std::string& key, int def) const;
    double get_double(const std::string& key, double def) const;
    bool get_bool(const std::string& key, bool def) const;

    // Keys never read by any consumer; call after construction is finished.
    void reject_unconsumed() const;

    const std::map<std::string, std::string>& items() const { return kv_; }

    // Canonical serialization: key-sorted "key=value" lines.
    std::string canonical_text() const;

private:
    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> consumed_;
};

}  // namespace evt
