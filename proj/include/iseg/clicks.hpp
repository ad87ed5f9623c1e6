#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iseg/region.hpp"
#include "iseg/types.hpp"

namespace iseg {

/// Disk heatmaps for the two click polarities.
struct GuidanceMaps {
    BinMask pos;
    BinMask neg;
};

/// Marks every pixel within Euclidean distance `radius` of a click, per polarity.
/// Disks are clipped at the border. Throws ArgumentError for out-of-bounds clicks.
GuidanceMaps encode_clicks(const ClickSet& clicks, int height, int width, int radius);

enum class ErrorKind { false_positive, false_negative };

struct ErrorRegion {
    ErrorKind kind = ErrorKind::false_negative;
    std::vector<int> pixels; // flat row-major indices, ascending
    int top = 0;             // bounding box
    int left = 0;
    int bottom = 0;
    int right = 0;

    std::size_t size() const { return pixels.size(); }
};

/// 4-connected components of the false-positive and false-negative pixels,
/// largest first. Equal sizes are ordered by bounding-box top-left (row, then col).
std::vector<ErrorRegion> error_regions(const BinMask& pred, const BinMask& gt);

/// Squared Euclidean distance of every pixel to the nearest pixel outside `mask`.
/// Pixels beyond the image border count as outside. Zero on non-mask pixels.
std::vector<long> squared_distance_to_complement(const BinMask& mask);

/// Robot user: the deepest pixel (distance-transform argmax) of the largest error
/// region. Positive for a missed region, negative for a spurious one. Ties go to the
/// lexicographically smallest (row, col); pixels already in `existing` are skipped.
/// Returns nullopt when pred equals gt. The returned click has step = existing.size()+1.
std::optional<Click> simulate_next_click(const BinMask& pred, const BinMask& gt, const ClickSet& existing);

struct CropClicks {
    ClickSet clicks;
    std::vector<std::size_t> dropped; // indices into the input of clicks outside the region
};

/// Maps source-pixel clicks into crop pixel coordinates (rounded to nearest).
CropClicks map_clicks_to_crop(const ClickSet& clicks, const ZoomRegion& region);
/// Inverse mapping, crop pixels back to source pixels (rounded to nearest).
Click unmap_click_from_crop(const Click& click, const ZoomRegion& region);

void to_json(nlohmann::json& j, const Click& c);
void from_json(const nlohmann::json& j, Click& c);

} // namespace iseg
