#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iseg/cascade.hpp"
#include "iseg/data_io.hpp"
#include "iseg/evalbench.hpp"
#include "iseg/model.hpp"
#include "iseg/training.hpp"

namespace iseg {

/// Flat key=value settings with optional `[section]` headers; a key inside
/// `[zoom]` is stored as `zoom.key`. `#` starts a comment, values may be quoted.
class Config {
  public:
    static Config parse(const std::string& text, const std::string& origin = "<config>");
    static Config load(const std::filesystem::path& path);

    /// Sets or overrides one dotted key.
    void set(const std::string& key, const std::string& value);
    /// Applies a `key=value` override string.
    void set_assignment(const std::string& assignment);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::optional<std::string> raw(const std::string& key) const;
    std::vector<std::string> keys() const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// Throws ArgumentError naming every key not in known_config_keys().
    void require_known() const;

  private:
    std::map<std::string, std::string> values_;
};

const std::vector<std::string>& known_config_keys();

void apply_config(const Config& c, ModelConfig& m);
void apply_config(const Config& c, CascadeConfig& z);
void apply_config(const Config& c, TrainConfig& t);
void apply_config(const Config& c, EvalConfig& e);
void apply_config(const Config& c, SceneConfig& s);

} // namespace iseg
