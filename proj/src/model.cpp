#include "iseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "iseg/errors.hpp"
#include "iseg/ops.hpp"

namespace iseg {

const char* to_string(FpmMode m) {
    switch (m) {
    case FpmMode::none: return "none";
    case FpmMode::sgm: return "sgm";
    case FpmMode::sgm_fuse: return "sgm_fuse";
    case FpmMode::sgm_fuse_sgm: return "sgm_fuse_sgm";
    case FpmMode::sgm_hsgm: return "sgm_hsgm";
    }
    return "?";
}

FpmMode fpm_mode_from_string(const std::string& s) {
    for (auto m : {FpmMode::none, FpmMode::sgm, FpmMode::sgm_fuse, FpmMode::sgm_fuse_sgm, FpmMode::sgm_hsgm})
        if (s == to_string(m)) return m;
    throw ArgumentError("unknown FPM mode '" + s + "'");
}

namespace {

struct ParamSpec {
    std::string name;
    Shape shape;
    enum Init { he, attention, message, zero, small } init;
};

std::vector<ParamSpec> layout(const ModelConfig& cfg) {
    const std::size_t cl = static_cast<std::size_t>(cfg.c_low), ch = static_cast<std::size_t>(cfg.c_high);
    const std::size_t branch = std::max<std::size_t>(ch / 2, 1);
    std::vector<ParamSpec> s = {
        {"img1.w", {cl, 3, 3, 3}, ParamSpec::he},       {"img1.b", {cl}, ParamSpec::zero},
        {"img2.w", {cl, cl, 3, 3}, ParamSpec::he},      {"img2.b", {cl}, ParamSpec::zero},
        {"guide1.w", {cl, 3, 3, 3}, ParamSpec::he},     {"guide1.b", {cl}, ParamSpec::zero},
        {"guide2.w", {cl, cl, 1, 1}, ParamSpec::he},    {"guide2.b", {cl}, ParamSpec::zero},
        {"down1.w", {ch, cl, 3, 3}, ParamSpec::he},     {"down1.b", {ch}, ParamSpec::zero},
        {"down2.w", {ch, ch, 3, 3}, ParamSpec::he},     {"down2.b", {ch}, ParamSpec::zero},
        {"aspp1.w", {branch, ch, 3, 3}, ParamSpec::he}, {"aspp1.b", {branch}, ParamSpec::zero},
        {"aspp2.w", {branch, ch, 3, 3}, ParamSpec::he}, {"aspp2.b", {branch}, ParamSpec::zero},
        {"aspp4.w", {branch, ch, 3, 3}, ParamSpec::he}, {"aspp4.b", {branch}, ParamSpec::zero},
        {"aspp_proj.w", {ch, 3 * branch, 1, 1}, ParamSpec::he},
        {"aspp_proj.b", {ch}, ParamSpec::zero},
    };
    if (cfg.fpm != FpmMode::none) {
        s.push_back({"sgm.w_c", {ch, ch}, ParamSpec::message});
        s.push_back({"sgm.theta", {ch, ch}, ParamSpec::attention});
        s.push_back({"sgm.phi", {ch, ch}, ParamSpec::attention});
        if (cfg.polarity_embedding) s.push_back({"sgm.polarity", {ch, 2}, ParamSpec::small});
    }
    if (cfg.fpm == FpmMode::none || cfg.fpm == FpmMode::sgm) {
        s.push_back({"gproj.w", {cl, ch, 1, 1}, ParamSpec::he});
        s.push_back({"gproj.b", {cl}, ParamSpec::zero});
    } else {
        s.push_back({"hsgm.sigma_w", {cl, cl + ch, 1, 1}, ParamSpec::he});
        s.push_back({"hsgm.sigma_b", {cl}, ParamSpec::zero});
    }
    if (cfg.fpm == FpmMode::sgm_hsgm) {
        s.push_back({"hsgm.w_f", {cl, cl}, ParamSpec::message});
        s.push_back({"hsgm.theta_g", {ch, ch}, ParamSpec::attention});
        s.push_back({"hsgm.phi_g", {ch, ch}, ParamSpec::attention});
        if (cfg.polarity_embedding) s.push_back({"hsgm.polarity", {ch, 2}, ParamSpec::small});
    }
    if (cfg.fpm == FpmMode::sgm_fuse_sgm) {
        s.push_back({"hsgm.w_f", {cl, cl}, ParamSpec::message});
        s.push_back({"hsgm.theta_f", {cl, cl}, ParamSpec::attention});
        s.push_back({"hsgm.phi_f", {cl, cl}, ParamSpec::attention});
        if (cfg.polarity_embedding) s.push_back({"hsgm.polarity_f", {cl, 2}, ParamSpec::small});
    }
    s.push_back({"head1.w", {cl, cl, 3, 3}, ParamSpec::he});
    s.push_back({"head1.b", {cl}, ParamSpec::zero});
    s.push_back({"head2.w", {1, cl, 1, 1}, ParamSpec::he});
    s.push_back({"head2.b", {1}, ParamSpec::zero});
    return s;
}

const Tensor kNone;

Tensor conv(Tape& tape, const Tensor& x, const ModelParams& p, const std::string& layer, ops::Conv2dOptions opt) {
    return ops::conv2d(tape, x, p.get(layer + ".w"), p.get(layer + ".b"), opt);
}

Tensor conv_relu(Tape& tape, const Tensor& x, const ModelParams& p, const std::string& layer, ops::Conv2dOptions opt) {
    return ops::relu(tape, conv(tape, x, p, layer, opt));
}

const Tensor& optional_param(const ModelParams& p, const std::string& name) {
    return p.has(name) ? p.get(name) : kNone;
}

} // namespace

EncodedInput encode_input(const Tensor& image, const ClickSet& clicks, const ProbMask& prev_prob, int radius) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("encode_input: image must be 3xHxW, got " + shape_str(image.shape()));
    }
    const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    if (prev_prob.height != h) throw DimensionError("encode_input: prev_prob height axis mismatch");
    if (prev_prob.width != w) throw DimensionError("encode_input: prev_prob width axis mismatch");
    return {image, encode_clicks(clicks, h, w, radius), prev_prob};
}

ModelParams ModelParams::init(const ModelConfig& cfg) {
    if (cfg.c_low < 1 || cfg.c_high < 2) throw ArgumentError("model channel widths too small");
    ModelParams p;
    p.cfg_ = cfg;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& spec : layout(cfg)) {
        Tensor t(spec.shape);
        double sd = 0.0;
        switch (spec.init) {
        case ParamSpec::he: {
            const std::size_t fan_in = shape_numel(spec.shape) / spec.shape[0];
            sd = std::sqrt(2.0 / static_cast<double>(fan_in));
            break;
        }
        case ParamSpec::attention: sd = 1.0 / std::sqrt(static_cast<double>(spec.shape[0])); break;
        case ParamSpec::message: sd = 0.5 / std::sqrt(static_cast<double>(spec.shape[0])); break;
        case ParamSpec::small: sd = 0.1; break;
        case ParamSpec::zero: sd = 0.0; break;
        }
        if (sd > 0.0)
            for (double& v : t.data()) v = normal(rng) * sd;
        t.set_trainable(true);
        p.tensors_.emplace_back(spec.name, std::move(t));
    }
    return p;
}

ModelParams ModelParams::from_tensors(const ModelConfig& cfg, NamedTensors tensors) {
    ModelParams p;
    p.cfg_ = cfg;
    for (const auto& spec : layout(cfg)) {
        auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == spec.name; });
        if (it == tensors.end()) throw FormatError("checkpoint is missing tensor '" + spec.name + "'");
        if (it->second.shape() != spec.shape) {
            throw FormatError("checkpoint tensor '" + spec.name + "' has shape " + shape_str(it->second.shape()) +
                              ", expected " + shape_str(spec.shape));
        }
        Tensor t = it->second;
        t.set_trainable(true);
        p.tensors_.emplace_back(spec.name, t);
    }
    if (p.tensors_.size() != tensors.size()) throw FormatError("checkpoint holds tensors unknown to this architecture");
    return p;
}

bool ModelParams::has(const std::string& name) const {
    return std::any_of(tensors_.begin(), tensors_.end(), [&](const auto& e) { return e.first == name; });
}

const Tensor& ModelParams::get(const std::string& name) const {
    for (const auto& [n, t] : tensors_)
        if (n == name) return t;
    throw ContractError("model has no parameter '" + name + "'");
}

Tensor& ModelParams::get(const std::string& name) {
    for (auto& [n, t] : tensors_)
        if (n == name) return t;
    throw ContractError("model has no parameter '" + name + "'");
}

std::vector<Tensor> ModelParams::parameters() const {
    std::vector<Tensor> out;
    for (const auto& e : tensors_) out.push_back(e.second);
    return out;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : tensors_) n += e.second.numel();
    return n;
}

ModelParams ModelParams::clone() const {
    ModelParams p;
    p.cfg_ = cfg_;
    for (const auto& [n, t] : tensors_) p.tensors_.emplace_back(n, t.clone());
    return p;
}

void ModelParams::set_trainable(bool on) {
    for (auto& e : tensors_) e.second.set_trainable(on);
}

void ModelParams::zero() {
    for (auto& e : tensors_) std::fill(e.second.data().begin(), e.second.data().end(), 0.0);
}

std::uint64_t ModelParams::fingerprint() const {
    const auto bytes = encode_checkpoint(tensors_);
    return fnv1a(bytes.data(), bytes.size());
}

Tensor fuse_guidance(Tape& tape, const EncodedInput& x, const ModelParams& p) {
    const std::size_t h = x.image.dim(1), w = x.image.dim(2);
    require_same_shape(x.guidance.pos, x.prev_prob, "fuse_guidance");
    require_same_shape(x.guidance.neg, x.prev_prob, "fuse_guidance");
    if (static_cast<std::size_t>(x.prev_prob.height) != h || static_cast<std::size_t>(x.prev_prob.width) != w) {
        throw DimensionError("fuse_guidance: guidance planes do not match the image");
    }
    Tensor guide({3, h, w});
    auto g = guide.data();
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < plane; ++i) {
        g[i] = x.prev_prob.data[i];
        g[plane + i] = x.guidance.pos.data[i];
        g[2 * plane + i] = x.guidance.neg.data[i];
    }
    auto img = conv_relu(tape, x.image, p, "img1", {2, 1, 1});
    img = conv_relu(tape, img, p, "img2", {1, 1, 1});
    auto gd = conv_relu(tape, guide, p, "guide1", {2, 1, 1});
    gd = conv(tape, gd, p, "guide2", {});
    return ops::add(tape, img, gd);
}

BackboneFeatures backbone_features(Tape& tape, const Tensor& fused, const ModelParams& p) {
    if (fused.rank() != 3 || fused.dim(1) % 2 || fused.dim(2) % 2) {
        throw ArgumentError("backbone_features: input must be CxHxW with even H and W (image divisible by 4)");
    }
    auto x = conv_relu(tape, fused, p, "down1", {2, 1, 1});
    x = conv_relu(tape, x, p, "down2", {1, 1, 1});
    auto a1 = conv_relu(tape, x, p, "aspp1", {1, 1, 1});
    auto a2 = conv_relu(tape, x, p, "aspp2", {1, 2, 2});
    auto a4 = conv_relu(tape, x, p, "aspp4", {1, 4, 4});
    auto f = conv(tape, ops::concat_channels(tape, {a1, a2, a4}), p, "aspp_proj", {});
    return {fused, f};
}

ForwardResult forward(Tape& tape, const EncodedInput& x, const ClickSet& clicks, const ModelParams& p) {
    const std::size_t h = x.image.dim(1), w = x.image.dim(2);
    if (h % 4 || w % 4) {
        throw ArgumentError("forward: image extents " + std::to_string(h) + "x" + std::to_string(w) +
                            " must be divisible by 4");
    }
    const auto& cfg = p.config();
    auto fused = fuse_guidance(tape, x, p);
    auto feats = backbone_features(tape, fused, p);

    Tensor ghat = feats.low_res;
    if (cfg.fpm != FpmMode::none) {
        const auto clicks_low = ClickIndexSet::from_clicks(clicks, h / 4, w / 4, 4);
        SgmParams sp{p.get("sgm.w_c"), p.get("sgm.theta"), p.get("sgm.phi"), optional_param(p, "sgm.polarity")};
        ghat = sgm_forward(tape, feats.low_res, clicks_low, sp);
    }
    ghat = ops::bilinear_upsample(tape, ghat, 2);

    Tensor z;
    const auto clicks_high = [&] { return ClickIndexSet::from_clicks(clicks, h / 2, w / 2, 2); };
    HsgmParams hp;
    if (p.has("hsgm.sigma_w")) {
        hp.sigma_w = p.get("hsgm.sigma_w");
        hp.sigma_b = p.get("hsgm.sigma_b");
    }
    switch (cfg.fpm) {
    case FpmMode::none:
    case FpmMode::sgm: z = conv_relu(tape, ghat, p, "gproj", {}); break;
    case FpmMode::sgm_fuse: z = hsgm_fuse(tape, feats.high_res, ghat, hp); break;
    case FpmMode::sgm_fuse_sgm: {
        auto fusedh = hsgm_fuse(tape, feats.high_res, ghat, hp);
        z = click_message_passing(tape, fusedh, fusedh, clicks_high(), p.get("hsgm.theta_f"), p.get("hsgm.phi_f"),
                                  p.get("hsgm.w_f"), optional_param(p, "hsgm.polarity_f"));
        break;
    }
    case FpmMode::sgm_hsgm:
        hp.w_f = p.get("hsgm.w_f");
        hp.theta_g = p.get("hsgm.theta_g");
        hp.phi_g = p.get("hsgm.phi_g");
        hp.polarity = optional_param(p, "hsgm.polarity");
        z = hsgm_forward(tape, feats.high_res, ghat, clicks_high(), hp);
        break;
    }
    auto head = conv_relu(tape, z, p, "head1", {1, 1, 1});
    auto logits_half = conv(tape, head, p, "head2", {});
    auto logits = ops::bilinear_upsample(tape, logits_half, 2);
    return {logits, ops::sigmoid(tape, logits)};
}

ProbMask predict(const ModelParams& p, const Tensor& image, const ProbMask& prev_prob, const ClickSet& clicks) {
    Tape tape(false);
    const auto x = encode_input(image, clicks, prev_prob, p.config().click_radius);
    return to_prob_mask(forward(tape, x, clicks, p).prob);
}

ProbMask to_prob_mask(const Tensor& prob) {
    if (prob.rank() != 3 || prob.dim(0) != 1) throw DimensionError("to_prob_mask: expected 1xHxW");
    ProbMask m(static_cast<int>(prob.dim(1)), static_cast<int>(prob.dim(2)));
    std::copy(prob.data().begin(), prob.data().end(), m.data.begin());
    return m;
}

Tensor to_plane_tensor(const ProbMask& mask) {
    return Tensor({1, static_cast<std::size_t>(mask.height), static_cast<std::size_t>(mask.width)}, mask.data);
}

Tensor nfl_loss(Tape& tape, const Tensor& prob, const BinMask& target, double gamma) {
    if (prob.numel() != target.size()) {
        throw DimensionError("nfl_loss: prediction has " + std::to_string(prob.numel()) + " pixels, target has " +
                             std::to_string(target.size()));
    }
    if (gamma < 0.0) throw ArgumentError("nfl_loss: gamma must be >= 0");
    const auto p = prob.data();
    const std::size_t n = p.size();
    std::vector<double> pt(n), wt(n), nll(n);
    std::vector<std::uint8_t> clamped(n);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double raw = target.data[i] ? p[i] : 1.0 - p[i];
        const double c = std::clamp(raw, kNflClamp, 1.0 - kNflClamp);
        clamped[i] = c != raw;
        pt[i] = c;
        wt[i] = gamma == 0.0 ? 1.0 : std::pow(1.0 - c, gamma);
        nll[i] = -std::log(c);
        num += wt[i] * nll[i];
        den += wt[i];
    }
    const bool floored = den < 1e-12;
    const double norm = floored ? 1e-12 : den;
    const double loss_value = num / norm;
    const bool track = tape.tracks({&prob});
    Tensor out = make_result({}, track);
    out.data()[0] = loss_value;
    if (track) {
        tape.record([out, prob, target, gamma, pt = std::move(pt), wt = std::move(wt), nll = std::move(nll),
                     clamped = std::move(clamped), norm, floored, loss_value]() mutable {
            if (!out.has_grad() || !prob.requires_grad()) return;
            const double g = out.grad()[0];
            auto dp = prob.grad_buffer();
            for (std::size_t i = 0; i < dp.size(); ++i) {
                if (clamped[i]) continue;
                const double dw = gamma == 0.0 ? 0.0 : -gamma * std::pow(1.0 - pt[i], gamma - 1.0);
                const double dl = -1.0 / pt[i];
                double d = (dw * nll[i] + wt[i] * dl) / norm;
                if (!floored) d -= loss_value * dw / norm;
                dp[i] += g * (target.data[i] ? d : -d);
            }
        });
    }
    return out;
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"c_low", c.c_low},
            {"c_high", c.c_high},
            {"fpm", to_string(c.fpm)},
            {"polarity_embedding", c.polarity_embedding},
            {"click_radius", c.click_radius},
            {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.c_low = j.at("c_low").get<int>();
        c.c_high = j.at("c_high").get<int>();
        c.fpm = fpm_mode_from_string(j.at("fpm").get<std::string>());
        c.polarity_embedding = j.at("polarity_embedding").get<bool>();
        c.click_radius = j.at("click_radius").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad model config: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, const ModelParams& p) {
    const auto bytes = encode_checkpoint(p.tensors());
    write_file_bytes(path, bytes);
    nlohmann::json side{{"format", "CPKT1"},
                        {"model", model_config_to_json(p.config())},
                        {"parameter_count", p.parameter_count()},
                        {"checkpoint_hash", hex64(fnv1a(bytes.data(), bytes.size()))}};
    std::ofstream js(path.string() + ".json");
    if (!js) throw IoError("cannot write sidecar for " + path.string());
    js << side.dump(2) << '\n';
}

ModelParams load_model(const std::filesystem::path& path) {
    const std::filesystem::path side_path = path.string() + ".json";
    if (!std::filesystem::exists(side_path)) throw IoError("checkpoint sidecar not found: " + side_path.string());
    std::ifstream in(side_path);
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(side_path.string() + ": " + e.what());
    }
    if (!side.contains("model")) throw FormatError(side_path.string() + ": no model section");
    return ModelParams::from_tensors(model_config_from_json(side["model"]), load_checkpoint(path));
}

} // namespace iseg
