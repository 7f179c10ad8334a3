#pragma once

// Plain `key = value` configuration text. '#' starts a comment; blank lines
// are ignored; later keys override earlier ones.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tunedetect/common.hpp"

namespace tunedetect {

class KeyValues {
public:
    KeyValues() = default;

    static KeyValues parse(std::string_view text, const std::string& origin = "<text>") {
        KeyValues kv;
        std::size_t line_no = 0;
        for (const auto& raw : split(text, '\n')) {
            ++line_no;
            std::string line = raw;
            if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw FormatError(origin + ":" + std::to_string(line_no) + ": expected key = value");
            kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return kv;
    }

    static KeyValues load(const std::filesystem::path& path) {
        return parse(read_file_bytes(path), path.string());
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) order_.push_back(key);
        values_[key] = value;
    }
    void set(const std::string& key, double v) { set(key, fmt_double(v)); }
    void set(const std::string& key, std::size_t v) { set(key, std::to_string(v)); }
    void set(const std::string& key, std::uint64_t v, int) { set(key, std::to_string(v)); }
    void set(const std::string& key, int v) { set(key, std::to_string(v)); }
    void set(const std::string& key, bool v) { set(key, std::string(v ? "true" : "false")); }
    void set(const std::string& key, const char* v) { set(key, std::string(v)); }

    [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }

    [[nodiscard]] std::optional<std::string> get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] std::string get_or(const std::string& key, const std::string& fallback) const {
        return get(key).value_or(fallback);
    }

    [[nodiscard]] double get_double(const std::string& key, double fallback) const {
        auto v = get(key);
        if (!v) return fallback;
        try {
            std::size_t used = 0;
            double d = std::stod(*v, &used);
            if (used != v->size()) throw std::invalid_argument(*v);
            return d;
        } catch (const std::exception&) {
            throw FormatError("config key '" + key + "': not a number: " + *v);
        }
    }

    [[nodiscard]] std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
        auto v = get(key);
        if (!v) return fallback;
        try {
            std::size_t used = 0;
            auto d = std::stoull(*v, &used);
            if (used != v->size()) throw std::invalid_argument(*v);
            return d;
        } catch (const std::exception&) {
            throw FormatError("config key '" + key + "': not an unsigned integer: " + *v);
        }
    }

    [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const {
        auto v = get(key);
        if (!v) return fallback;
        if (*v == "true" || *v == "1" || *v == "yes") return true;
        if (*v == "false" || *v == "0" || *v == "no") return false;
        throw FormatError("config key '" + key + "': not a boolean: " + *v);
    }

    /// Later keys win.
    void merge(const KeyValues& other) {
        for (const auto& k : other.order_) set(k, other.values_.at(k));
    }

    [[nodiscard]] std::string to_text() const {
        std::string out;
        for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
        return out;
    }

    [[nodiscard]] const std::vector<std::string>& keys() const { return order_; }

    /// Keys starting with `prefix`, with the prefix removed.
    [[nodiscard]] KeyValues with_prefix(const std::string& prefix) const {
        KeyValues out;
        for (const auto& k : order_)
            if (k.rfind(prefix, 0) == 0) out.set(k.substr(prefix.size()), values_.at(k));
        return out;
    }

private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

inline std::optional<std::string> env(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

}  // namespace tunedetect
