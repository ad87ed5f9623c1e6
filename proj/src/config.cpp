#include "iseg/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "iseg/errors.hpp"

namespace iseg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

std::string unquote(const std::string& v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    return v;
}

} // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
    Config c;
    std::istringstream in(text);
    std::string section;
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        const auto where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') throw ArgumentError(where + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw ArgumentError(where + ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ArgumentError(where + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ArgumentError(where + ": empty key");
        c.set(section.empty() ? key : section + "." + key, unquote(trim(line.substr(eq + 1))));
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config file not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

void Config::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ArgumentError("override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), unquote(trim(assignment.substr(eq + 1))));
}

std::optional<std::string> Config::raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> Config::keys() const {
    std::vector<std::string> out;
    for (const auto& e : values_) out.push_back(e.first);
    return out;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return raw(key).value_or(fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const double d = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        throw ArgumentError("config key '" + key + "': '" + *v + "' is not a number");
    }
}

namespace {

template <class Int>
Int parse_int(const std::string& key, const std::string& v) {
    Int out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ArgumentError("config key '" + key + "': '" + v + "' is not an integer");
    }
    return out;
}

} // namespace

int Config::get_int(const std::string& key, int fallback) const {
    const auto v = raw(key);
    return v ? parse_int<int>(key, *v) : fallback;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto v = raw(key);
    return v ? parse_int<std::uint64_t>(key, *v) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ArgumentError("config key '" + key + "': '" + *v + "' is not a boolean");
}

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {
        "seed", "threads", "deterministic",
        "model.c_low", "model.c_high", "model.fpm", "model.polarity_embedding", "model.click_radius",
        "zoom.threshold", "zoom.margin_scale", "zoom.margin_min", "zoom.margin_max", "zoom.target_h",
        "zoom.target_w", "zoom.strategy",
        "train.epochs_coarse", "train.epochs_fine", "train.lr_coarse", "train.lr_fine", "train.batch_size",
        "train.gamma", "train.ablation", "train.milestone1", "train.milestone2",
        "sampler.max_clicks", "sampler.random_prob", "sampler.neg_min_distance", "sampler.pos_min_depth",
        "augment.enabled", "augment.flip_prob", "augment.vertical_flip", "augment.scale_min", "augment.scale_max",
        "eval.tau", "eval.max_clicks", "eval.binarize_threshold",
        "data.height", "data.width", "data.noise_sigma", "data.max_distractors", "data.min_area", "data.max_area",
        "data.n_train", "data.n_eval",
        "bench.runs", "bench.warmup", "bench.min_run_ms", "bench.m", "bench.c", "bench.sizes",
        "service.port", "service.session_ttl", "service.static_dir", "service.max_sessions",
    };
    return keys;
}

void Config::require_known() const {
    const auto& known = known_config_keys();
    std::string unknown;
    for (const auto& [k, v] : values_) {
        if (std::find(known.begin(), known.end(), k) == known.end()) unknown += (unknown.empty() ? "" : ", ") + k;
    }
    if (!unknown.empty()) throw ArgumentError("unknown config keys: " + unknown);
}

void apply_config(const Config& c, ModelConfig& m) {
    m.c_low = c.get_int("model.c_low", m.c_low);
    m.c_high = c.get_int("model.c_high", m.c_high);
    if (auto v = c.raw("model.fpm")) m.fpm = fpm_mode_from_string(*v);
    m.polarity_embedding = c.get_bool("model.polarity_embedding", m.polarity_embedding);
    m.click_radius = c.get_int("model.click_radius", m.click_radius);
    m.seed = c.get_u64("seed", m.seed);
}

void apply_config(const Config& c, CascadeConfig& z) {
    z.threshold = c.get_double("zoom.threshold", z.threshold);
    z.margin_scale = c.get_double("zoom.margin_scale", z.margin_scale);
    z.margin_min = c.get_double("zoom.margin_min", z.margin_min);
    z.margin_max = c.get_double("zoom.margin_max", z.margin_max);
    z.target_h = c.get_int("zoom.target_h", z.target_h);
    z.target_w = c.get_int("zoom.target_w", z.target_w);
    if (auto v = c.raw("zoom.strategy")) z.strategy = strategy_from_string(*v);
}

void apply_config(const Config& c, TrainConfig& t) {
    t.epochs_coarse = c.get_int("train.epochs_coarse", t.epochs_coarse);
    t.epochs_fine = c.get_int("train.epochs_fine", t.epochs_fine);
    t.lr_coarse = c.get_double("train.lr_coarse", t.lr_coarse);
    t.lr_fine = c.get_double("train.lr_fine", t.lr_fine);
    t.batch_size = c.get_int("train.batch_size", t.batch_size);
    t.gamma = c.get_double("train.gamma", t.gamma);
    if (auto v = c.raw("train.ablation")) t.ablation = ablation_from_string(*v);
    t.milestone1 = c.get_double("train.milestone1", t.milestone1);
    t.milestone2 = c.get_double("train.milestone2", t.milestone2);
    t.seed = c.get_u64("seed", t.seed);
    t.sampler.max_clicks = c.get_int("sampler.max_clicks", t.sampler.max_clicks);
    t.sampler.random_prob = c.get_double("sampler.random_prob", t.sampler.random_prob);
    t.sampler.neg_min_distance = c.get_int("sampler.neg_min_distance", t.sampler.neg_min_distance);
    t.sampler.pos_min_depth = c.get_int("sampler.pos_min_depth", t.sampler.pos_min_depth);
    t.augment.enabled = c.get_bool("augment.enabled", t.augment.enabled);
    t.augment.flip_prob = c.get_double("augment.flip_prob", t.augment.flip_prob);
    t.augment.vertical_flip = c.get_bool("augment.vertical_flip", t.augment.vertical_flip);
    t.augment.scale_min = c.get_double("augment.scale_min", t.augment.scale_min);
    t.augment.scale_max = c.get_double("augment.scale_max", t.augment.scale_max);
    apply_config(c, t.model);
    apply_config(c, t.zoom);
    if (!c.has("zoom.strategy")) t.zoom.strategy = uses_iaf(t.ablation) ? Strategy::coarse_to_fine : Strategy::coarse_only;
    if (!c.has("model.fpm")) t.model.fpm = uses_fpm(t.ablation) ? FpmMode::sgm_hsgm : FpmMode::none;
    t.strategy = t.zoom.strategy;
}

void apply_config(const Config& c, EvalConfig& e) {
    e.tau = c.get_double("eval.tau", e.tau);
    e.max_clicks = c.get_int("eval.max_clicks", e.max_clicks);
    e.binarize_threshold = c.get_double("eval.binarize_threshold", e.binarize_threshold);
}

void apply_config(const Config& c, SceneConfig& s) {
    s.height = c.get_int("data.height", s.height);
    s.width = c.get_int("data.width", s.width);
    s.noise_sigma = c.get_double("data.noise_sigma", s.noise_sigma);
    s.max_distractors = c.get_int("data.max_distractors", s.max_distractors);
    s.min_area = c.get_double("data.min_area", s.min_area);
    s.max_area = c.get_double("data.max_area", s.max_area);
}

} // namespace iseg
