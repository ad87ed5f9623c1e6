#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iseg/checkpoint.hpp"
#include "iseg/clicks.hpp"
#include "iseg/graph_prop.hpp"
#include "iseg/tensor.hpp"
#include "iseg/types.hpp"

namespace iseg {

/// Which feature propagation path sits between the backbone and the head.
///   none          ghat = up(F); head sees a 1x1 projection of ghat (no click messages)
///   sgm           ghat = up(SGM(F)); same projection head input
///   sgm_fuse      head sees sigma(F^h ; ghat), no high-res messages
///   sgm_fuse_sgm  fused features followed by a second sparse graph whose attention
///                 runs on the fused (low-level) features
///   sgm_hsgm      full high-res sparse graph, attention on ghat
enum class FpmMode { none, sgm, sgm_fuse, sgm_fuse_sgm, sgm_hsgm };

const char* to_string(FpmMode m);
FpmMode fpm_mode_from_string(const std::string& s);

struct ModelConfig {
    int c_low = 16;  // C', channels of F^h
    int c_high = 32; // C, channels of F
    FpmMode fpm = FpmMode::sgm_hsgm;
    bool polarity_embedding = true;
    int click_radius = 5;
    std::uint64_t seed = 0;

    bool operator==(const ModelConfig&) const = default;
};

/// Image, disk-encoded clicks and previous prediction, all HxW aligned.
struct EncodedInput {
    Tensor image; // 3xHxW in [0,1]
    GuidanceMaps guidance;
    ProbMask prev_prob;
};

EncodedInput encode_input(const Tensor& image, const ClickSet& clicks, const ProbMask& prev_prob, int radius);

class ModelParams {
  public:
    ModelParams() = default;
    /// He-initialized parameters for `cfg`, seeded from cfg.seed.
    static ModelParams init(const ModelConfig& cfg);
    static ModelParams from_tensors(const ModelConfig& cfg, NamedTensors tensors);

    const ModelConfig& config() const { return cfg_; }
    const NamedTensors& tensors() const { return tensors_; }
    bool has(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);

    /// Every tensor, in declaration order. They are the trainable set.
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;

    ModelParams clone() const;
    void set_trainable(bool on);
    /// Zeroes every weight and bias.
    void zero();
    std::uint64_t fingerprint() const;

  private:
    ModelConfig cfg_;
    NamedTensors tensors_;
};

/// Guidance branch ([prev, pos, neg] -> conv stride 2 -> relu -> 1x1 conv) added
/// to the image branch's first-block output. Result is C' x H/2 x W/2.
Tensor fuse_guidance(Tape& tape, const EncodedInput& x, const ModelParams& p);

struct BackboneFeatures {
    Tensor high_res; // F^h, C' x H/2 x W/2
    Tensor low_res;  // F,   C  x H/4 x W/4
};

/// Strided conv pair plus mini-ASPP (dilations 1, 2, 4) over the fused first block.
BackboneFeatures backbone_features(Tape& tape, const Tensor& fused, const ModelParams& p);

struct ForwardResult {
    Tensor logits; // 1 x H x W
    Tensor prob;   // sigmoid(logits)
};

/// Full network: fusion, backbone, FPM, two-layer head, bilinear x2, sigmoid.
/// H and W must be divisible by 4.
ForwardResult forward(Tape& tape, const EncodedInput& x, const ClickSet& clicks, const ModelParams& p);

/// Inference convenience wrapper: encodes the input and returns the probability map.
ProbMask predict(const ModelParams& p, const Tensor& image, const ProbMask& prev_prob, const ClickSet& clicks);

ProbMask to_prob_mask(const Tensor& prob);
Tensor to_plane_tensor(const ProbMask& mask);

/// Normalized focal loss:
///   sum_n (1-p_t)^gamma * -log(p_t) / max(sum_n (1-p_t)^gamma, 1e-12)
/// with p_t = P on foreground and 1-P on background, p_t clamped to [1e-7, 1-1e-7].
/// The gradient flows through both numerator and normalizer.
Tensor nfl_loss(Tape& tape, const Tensor& prob, const BinMask& target, double gamma);

inline constexpr double kNflClamp = 1e-7;

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Checkpoint = CPKT1 tensors plus a JSON sidecar (`<path>.json`) holding the
/// architecture hyperparameters and the checkpoint hash.
void save_model(const std::filesystem::path& path, const ModelParams& p);
ModelParams load_model(const std::filesystem::path& path);

} // namespace iseg
