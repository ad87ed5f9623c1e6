#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "iseg/cascade.hpp"
#include "iseg/data_io.hpp"
#include "iseg/types.hpp"

namespace iseg {

struct EvalConfig {
    double tau = 0.85;
    int max_clicks = 20;
    double binarize_threshold = 0.5;

    void validate() const;
};

struct EvalRecord {
    std::string sample;
    std::vector<double> ious; // one entry per click
    int clicks_used = 0;
    bool success = false;
    std::vector<double> ms_per_click;
    std::string error; // nonempty when the sample could not be evaluated

    double final_iou() const { return ious.empty() ? 0.0 : ious.back(); }
};

/// |pred & gt| / |pred | gt|; two empty masks give 1.
double iou(const BinMask& pred, const BinMask& gt);

/// Robot-user protocol over `data`: from zero clicks, click the deepest point of the
/// largest error region, run one cascade step, stop at IoU >= tau or max_clicks.
/// Samples are spread over `threads` workers; records keep dataset order.
std::vector<EvalRecord> evaluate(const Predictor& coarse, const Predictor& fine, const Dataset& data,
                                 const EvalConfig& cfg, const CascadeConfig& cascade, int threads = 1);
EvalRecord evaluate_sample(const Predictor& coarse, const Predictor& fine, const SyntheticScene& scene,
                           const EvalConfig& cfg, const CascadeConfig& cascade);

/// Mean clicks used, failures charged max_clicks.
double noc(const std::vector<EvalRecord>& records, const EvalConfig& cfg);
int nof(const std::vector<EvalRecord>& records);

/// Mean IoU after k = 1..k_max clicks; records that stopped early hold their last IoU.
std::vector<double> miou_at_k(const std::vector<EvalRecord>& records, int k_max);

struct ClickHistogram {
    std::vector<std::string> labels; // "1-5", ..., "fail"
    std::vector<int> counts;
};

/// Successful records binned by clicks used into bins of `bin_width`, up to
/// max_clicks; failures land in the trailing "fail" bin.
ClickHistogram click_histogram(const std::vector<EvalRecord>& records, int max_clicks, int bin_width = 5);

struct SpcStats {
    double median_s = 0.0;
    double mean_s = 0.0;
    std::size_t steps = 0;
    std::string machine;
};

/// Seconds per interactive step over the first clicks of each sample, after a
/// warm-up pass on the first sample.
SpcStats spc_benchmark(const Predictor& coarse, const Predictor& fine, const Dataset& data, const CascadeConfig& cascade,
                       int clicks_per_sample = 5);

std::string machine_descriptor();

/// Reference points from the published large-scale experiments. They are not
/// reproducible with the toy backbone and only appear in reports.
inline constexpr double kReferenceNoc90Davis = 5.8;
inline constexpr double kReferenceWithin5ClicksDavis = 0.713;
inline constexpr double kReferenceSpcSeconds = 0.217;

/// Writes `<stem>.csv` (sample,clicks,success,final_iou,ms_per_click), `<stem>.json`
/// ({noc, nof, curve, histogram, ...}) and `<stem>_miou.tsv`.
void write_eval_report(const std::vector<EvalRecord>& records, const EvalConfig& cfg,
                       const std::filesystem::path& stem);

} // namespace iseg
