#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "iseg/tensor.hpp"
#include "iseg/types.hpp"

namespace iseg {

struct ClickIndex {
    std::size_t index = 0; // flat row-major position on the feature grid
    Polarity polarity = Polarity::positive;
    bool operator==(const ClickIndex&) const = default;
};

/// Click locations on a feature grid. Entries are unique: a later click that lands
/// on an already occupied cell is dropped.
class ClickIndexSet {
  public:
    ClickIndexSet() = default;

    /// Maps pixel clicks to a grid of `grid_h` x `grid_w` cells by floor-dividing
    /// pixel coordinates by `stride`. Coordinates beyond the grid clamp to the last cell.
    static ClickIndexSet from_clicks(const ClickSet& clicks, std::size_t grid_h, std::size_t grid_w, int stride);
    static ClickIndexSet from_indices(const std::vector<ClickIndex>& entries, std::size_t grid_size);

    const std::vector<ClickIndex>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

  private:
    std::vector<ClickIndex> entries_;
};

/// Low-resolution sparse graph: f_n + sum_j alpha(f_n, f_uj) W_c^T f_uj.
/// theta and phi are CxC matrices applied as theta*f. `polarity` is an optional Cx2
/// embedding added to click (key) features before phi; leave it undefined to get
/// the plain equations.
struct SgmParams {
    Tensor w_c;
    Tensor theta;
    Tensor phi;
    Tensor polarity;
};

/// High-resolution sparse graph. `sigma_w`/`sigma_b` form the 1x1 conv + relu that
/// fuses [F^h ; g] (C'+C channels) down to C'. Attention runs on g only.
struct HsgmParams {
    Tensor sigma_w;
    Tensor sigma_b;
    Tensor w_f;
    Tensor theta_g;
    Tensor phi_g;
    Tensor polarity;
};

/// Generic click-to-all message passing, the shared kernel behind SGM and HSGM:
///   out_n = v_n + sum_j softmax_j( (theta q_n) . (phi (q_uj + e_pol_j)) ) * W^T v_uj
/// where q are the attention features and v the carried values. With no clicks
/// the values tensor is returned unchanged. Cost is O(M N C + N C^2).
Tensor click_message_passing(Tape& tape, const Tensor& attn_feats, const Tensor& values,
                             const ClickIndexSet& clicks, const Tensor& theta, const Tensor& phi,
                             const Tensor& w, const Tensor& polarity);

/// Attention weights of SGM as an (H*W) x M row-stochastic matrix.
/// Throws ArgumentError when there are no clicks.
Tensor sgm_attention(const Tensor& features, const ClickIndexSet& clicks, const SgmParams& p);
Tensor sgm_forward(Tape& tape, const Tensor& features, const ClickIndexSet& clicks, const SgmParams& p);

/// Attention weights of HSGM, computed from the upsampled low-res output only.
Tensor hsgm_attention(const Tensor& ghat_up, const ClickIndexSet& clicks_h, const HsgmParams& p);
/// sigma(f^h ; g) without the message term.
Tensor hsgm_fuse(Tape& tape, const Tensor& fh, const Tensor& ghat_up, const HsgmParams& p);
Tensor hsgm_forward(Tape& tape, const Tensor& fh, const Tensor& ghat_up, const ClickIndexSet& clicks_h,
                    const HsgmParams& p);

/// Fully connected non-local block with the SGM parameterization. Each location
/// attends over every location, or only over `restrict_cols` when given (in which
/// case the result equals sgm_forward). O(N^2 C); reference and benchmark only.
Tensor dense_nonlocal_oracle(const Tensor& features, const SgmParams& p,
                             const std::optional<ClickIndexSet>& restrict_cols = std::nullopt);

struct ScalingRow {
    std::size_t n = 0;
    std::size_t m = 0;
    std::size_t c = 0;
    double sparse_ms = 0.0;
    double dense_ms = 0.0;
};

struct ScalingReport {
    std::vector<ScalingRow> rows;
    double sparse_slope = 0.0; // least-squares slope of log(time) against log(N)
    double dense_slope = 0.0;
};

struct ScalingOptions {
    int runs = 10;
    int warmup = 2;
    double min_run_ms = 20.0; // each timed run repeats the call to at least this duration
    std::uint64_t seed = 0;
};

/// Times sgm_forward against the dense oracle on C x 1 x N feature maps with M
/// clicks. Reports per-call wall-clock medians per size.
ScalingReport benchmark_scaling(std::size_t c, std::size_t m, const std::vector<std::size_t>& sizes,
                                const ScalingOptions& opt = {});

/// Writes `<stem>.csv` (n,m,c,sparse_ms,dense_ms) and `<stem>.json` (rows + slopes).
void write_scaling_report(const ScalingReport& report, const std::filesystem::path& stem);

} // namespace iseg
