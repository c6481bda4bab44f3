#pragma once

#include "bgps/error.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

namespace bgps::detail {

// Reads one JSON object strictly: type mismatches, missing required keys
// and (on finish) unknown keys raise ConfigError with the full field path.
class ObjectReader {
  public:
    ObjectReader(const nlohmann::json & j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError(path_, "expected an object");
        }
    }

    std::string child(const std::string & key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string & key) const { return j_.contains(key); }

    // Marks the key consumed and returns it, or nullptr when absent.
    const nlohmann::json * get(const std::string & key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    template <typename T>
    void opt(const std::string & key, T & out) {
        if (const auto * v = get(key)) {
            out = convert<T>(*v, child(key));
        }
    }

    template <typename T>
    void req(const std::string & key, T & out) {
        const auto * v = get(key);
        if (v == nullptr) {
            throw ConfigError(child(key), "missing required field");
        }
        out = convert<T>(*v, child(key));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw ConfigError(child(it.key()), "unknown field");
            }
        }
    }

    template <typename T>
    static T convert(const nlohmann::json & v, const std::string & path) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) {
                throw ConfigError(path, "expected a boolean");
            }
            return v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) {
                throw ConfigError(path, "expected an integer");
            }
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_unsigned()) {
                    return v.get<T>();
                }
                if (v.get<std::int64_t>() < 0) {
                    throw ConfigError(path, "expected a non-negative integer");
                }
            }
            return v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) {
                throw ConfigError(path, "expected a number");
            }
            return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) {
                throw ConfigError(path, "expected a string");
            }
            return v.get<std::string>();
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            if (!v.is_array()) {
                throw ConfigError(path, "expected an array of strings");
            }
            std::vector<std::string> out;
            for (std::size_t i = 0; i < v.size(); ++i) {
                out.push_back(convert<std::string>(v[i], path + "[" + std::to_string(i) + "]"));
            }
            return out;
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            if (!v.is_array()) {
                throw ConfigError(path, "expected an array of numbers");
            }
            std::vector<double> out;
            for (std::size_t i = 0; i < v.size(); ++i) {
                out.push_back(convert<double>(v[i], path + "[" + std::to_string(i) + "]"));
            }
            return out;
        } else {
            return v.get<T>();
        }
    }

  private:
    const nlohmann::json & j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace bgps::detail
