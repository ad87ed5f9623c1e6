#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "iseg/cascade.hpp"
#include "iseg/data_io.hpp"
#include "iseg/evalbench.hpp"
#include "iseg/model.hpp"

namespace iseg {

/// Which parts of the method are switched on.
///   baseline  no propagation module, coarse network only
///   fpm       SGM + HSGM, coarse network only
///   iaf       no propagation module, coarse-to-fine cascade
///   full      SGM + HSGM with the coarse-to-fine cascade
enum class Ablation { baseline, fpm, iaf, full };

const char* to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);
bool uses_fpm(Ablation a);
bool uses_iaf(Ablation a);

struct SamplerConfig {
    int max_clicks = 8;
    double random_prob = 0.5;  // share of samples whose extra clicks are random rather than corrective
    int neg_min_distance = 5;  // random negatives keep this far from the object
    int pos_min_depth = 2;     // random positives keep this deep inside the object
};

struct AugmentConfig {
    bool enabled = true;
    double flip_prob = 0.5;
    bool vertical_flip = false;
    double scale_min = 0.75;
    double scale_max = 1.25;
};

struct TrainConfig {
    int epochs_coarse = 30;
    int epochs_fine = 10;
    double lr_coarse = 1e-3;
    double lr_fine = 1e-5;
    int batch_size = 8;
    double gamma = 2.0;
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::full;
    Strategy strategy = Strategy::coarse_to_fine;
    ModelConfig model;
    CascadeConfig zoom;
    SamplerConfig sampler;
    AugmentConfig augment;
    /// Learning-rate milestones as fractions of the epoch budget; each multiplies by 0.1.
    double milestone1 = 0.80;
    double milestone2 = 0.95;
    std::filesystem::path log_path; // JSON-lines step log; empty disables logging

    void validate() const;
};

/// Learning rate in effect during `epoch` (0-based) out of `epochs`.
double scheduled_lr(double base, int epoch, int epochs, double milestone1, double milestone2);

struct SampledClicks {
    ClickSet clicks;
    ProbMask prev_prob;
    bool corrective = false;
};

/// Iterative click simulation for one training sample. k ~ U{1..max_clicks}; the
/// first click is positive, drawn uniformly from the pixels of the largest gt
/// component whose depth is at least half the component's maximum depth. The
/// remaining k-1 clicks are random (probability random_prob) or come from running
/// `model` and the robot user step by step. prev_prob is the model output before
/// the last click, or zeros when the model never ran. Throws ArgumentError on an
/// empty gt.
SampledClicks sample_training_clicks(const BinMask& gt, const Tensor& image, const Predictor* model,
                                     std::mt19937_64& rng, const SamplerConfig& cfg);

struct AugmentDraw {
    bool hflip = false;
    bool vflip = false;
    double scale = 1.0;
    int offset_y = 0; // top-left of the output window in the scaled frame; negative pads
    int offset_x = 0;
};

AugmentDraw draw_augment(int height, int width, std::mt19937_64& rng, const AugmentConfig& cfg);
/// Applies one draw: flips, rescale (bilinear image, nearest mask) and a window of
/// the original size. Pixels outside the scaled frame replicate the image edge and
/// are background in the mask.
SyntheticScene apply_augment(const SyntheticScene& scene, const AugmentDraw& d);
/// Random draw + apply; keeps the input unchanged when the draw would leave no
/// foreground.
SyntheticScene augment(const SyntheticScene& scene, std::mt19937_64& rng, const AugmentConfig& cfg);

struct StepLog {
    long step = 0;
    int epoch = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
};

class TrainingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    ModelParams params;
    std::vector<StepLog> log;
};

/// Called after every optimizer step; return false to stop early.
using StepCallback = std::function<bool(const StepLog&, const ModelParams&)>;

/// Stage one: Adam on NFL over full-frame coarse passes with simulated clicks.
TrainResult train_coarse(const Dataset& data, const TrainConfig& cfg, const StepCallback& on_step = {});

/// Stage two: fine network initialized from `coarse` and trained on zoomed crops
/// produced by the frozen coarse network.
TrainResult train_fine(const ModelParams& coarse, const Dataset& data, const TrainConfig& cfg,
                       const StepCallback& on_step = {});

/// Ground truth resampled into a crop (bilinear, thresholded at 0.5).
BinMask crop_mask(const BinMask& gt, const ZoomRegion& region);

// ---- ablations ----------------------------------------------------------------

enum class AblationGrid { components, fpm, iaf };

const char* to_string(AblationGrid g);
AblationGrid ablation_grid_from_string(const std::string& s);

struct AblationCell {
    std::string grid;
    std::string variant;
    std::uint64_t seed = 0;
    double noc = 0.0;
    int nof = 0;
    double miou_at_5 = 0.0;
    double train_seconds = 0.0;
};

struct AblationReport {
    std::vector<AblationCell> cells;
    /// Mean NoC per variant across seeds, in first-appearance order.
    std::vector<std::pair<std::string, double>> mean_noc() const;
    double mean_noc(const std::string& variant) const;
};

struct AblationOptions {
    std::vector<AblationGrid> grids{AblationGrid::components};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    /// Variant names to keep (e.g. "baseline", "SGM"); empty keeps every variant of the grids.
    std::vector<std::string> variants;
    int threads = 1;
    std::filesystem::path work_dir; // checkpoints and logs per job; empty keeps everything in memory
};

/// Trains and evaluates every variant of the requested grids for every seed.
/// Identical trainings shared between variants run once.
AblationReport run_ablation(const Dataset& train, const Dataset& eval, const TrainConfig& base,
                            const EvalConfig& eval_cfg, const AblationOptions& opt);

/// CSV `grid,variant,seed,noc,nof,miou_at_5,train_seconds`, plus `<stem>_summary.csv`
/// with `grid,variant,mean_noc`.
void write_ablation_csv(const AblationReport& r, const std::filesystem::path& path);

} // namespace iseg
