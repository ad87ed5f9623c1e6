#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "iseg/clicks.hpp"
#include "iseg/model.hpp"
#include "iseg/region.hpp"
#include "iseg/tensor.hpp"
#include "iseg/types.hpp"

namespace iseg {

/// How the two stages of an interactive step are staffed.
///   coarse_to_fine    coarse net on the frame, fine net on the zoomed crop
///   coarse_to_coarse  coarse net for both passes
///   fine_to_fine      fine net for both passes
///   coarse_only       no zoom-in at all (the framework switched off)
enum class Strategy { coarse_to_fine, coarse_to_coarse, fine_to_fine, coarse_only };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct CascadeConfig {
    double threshold = 0.5;
    double margin_scale = 0.4;
    double margin_min = 0.1;
    double margin_max = 0.8;
    int target_h = 96;
    int target_w = 144;
    Strategy strategy = Strategy::coarse_to_fine;

    /// Throws ArgumentError on an inconsistent configuration.
    void validate() const;
};

/// m = clamp(margin_scale * (1 - s), margin_min, margin_max), s = box area / frame area.
double adaptive_margin(double area_fraction, const CascadeConfig& cfg);

/// Tight box of {P_c >= threshold}, grown by m * max(box_h, box_w) on every side,
/// rounded outward to whole pixels, clipped to the frame and widened to the minimum
/// extent when needed. Returns nullopt when nothing reaches the threshold.
std::optional<ZoomRegion> adaptive_box(const ProbMask& coarse, const CascadeConfig& cfg);

/// One interactive episode. `step` always equals clicks.size().
struct SessionState {
    Tensor image; // 3xHxW in [0,1]
    ClickSet clicks;
    ProbMask prev_prob;
    int step = 0;
    std::optional<ZoomRegion> last_region;

    static SessionState start(const Tensor& image);
    int height() const { return prev_prob.height; }
    int width() const { return prev_prob.width; }
    /// Deep copy (the image handle is cloned as well).
    SessionState snapshot() const;
    bool operator==(const SessionState& o) const;
};

/// Bilinear crops under the corner-aligned convention of ZoomRegion.
Tensor crop_image(const Tensor& image, const ZoomRegion& region);
ProbMask crop_plane(const ProbMask& plane, const ZoomRegion& region);

struct ZoomedInput {
    Tensor image;
    ProbMask prob;
    CropClicks clicks;
    ZoomRegion region;
};

/// ZoomIn: adaptive box on P_c, then image, P_c and clicks moved into the crop.
/// nullopt signals an empty foreground.
std::optional<ZoomedInput> zoom_in(const SessionState& session, const ProbMask& coarse, const CascadeConfig& cfg);

/// Resizes `crop` into the region's source rectangle; everything outside keeps
/// `background`. Throws ContractError when the region does not fit the frame.
ProbMask remap_to_full(const ProbMask& crop, const ZoomRegion& region, int full_h, int full_w,
                       const ProbMask& background);

/// Anything that maps (image, previous probability, clicks) to a probability map.
using Predictor = std::function<ProbMask(const Tensor& image, const ProbMask& prev, const ClickSet& clicks)>;

Predictor model_predictor(const ModelParams& params);

struct StepResult {
    ProbMask prob;   // P^t
    ProbMask coarse; // P_c^t
    std::optional<ZoomRegion> region;
};

/// Validates a new click against the session: OutOfBoundsError, DuplicateClickError.
void check_click(const SessionState& session, const Click& click);

/// Runs one interactive step and advances the session (clicks, prev_prob, step,
/// last_region). The click's step field is overwritten with the new step index.
StepResult interactive_step(SessionState& session, Click click, const Predictor& coarse, const Predictor& fine,
                            const CascadeConfig& cfg);

/// Coarse and (optionally) fine parameters travelling together.
struct CascadeModel {
    ModelParams coarse;
    std::optional<ModelParams> fine;

    Predictor coarse_predictor() const;
    /// The fine predictor, or the coarse one when there is no fine network.
    Predictor fine_predictor() const;
};

/// One CPKT1 file with `coarse/` and `fine/` name prefixes plus a `<path>.json`
/// sidecar holding both architectures.
void save_cascade(const std::filesystem::path& path, const CascadeModel& model);
CascadeModel load_cascade(const std::filesystem::path& path);

} // namespace iseg
