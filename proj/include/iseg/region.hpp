#pragma once

#include <string>

namespace iseg {

/// Source-image rectangle [top, top+height) x [left, left+width) resampled to
/// target_h x target_w. Both directions use the corner-aligned bilinear convention:
/// crop row i samples source row top + i*(height-1)/(target_h-1). Aspect ratio is
/// not preserved (no letterboxing).
struct ZoomRegion {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;
    int target_h = 0;
    int target_w = 0;

    static constexpr int kMinExtent = 8;

    static ZoomRegion full(int h, int w) { return {0, 0, h, w, h, w}; }

    double row_scale() const { return target_h > 1 && height > 1 ? double(height - 1) / double(target_h - 1) : 1.0; }
    double col_scale() const { return target_w > 1 && width > 1 ? double(width - 1) / double(target_w - 1) : 1.0; }

    double source_row(double crop_row) const { return top + crop_row * row_scale(); }
    double source_col(double crop_col) const { return left + crop_col * col_scale(); }
    double crop_row(double src_row) const { return (src_row - top) / row_scale(); }
    double crop_col(double src_col) const { return (src_col - left) / col_scale(); }

    bool contains(int row, int col) const {
        return row >= top && row < top + height && col >= left && col < left + width;
    }

    /// Checks the type invariants against a source frame; returns an empty string
    /// when valid, otherwise a description of the first violation.
    std::string violation(int frame_h, int frame_w) const;

    bool operator==(const ZoomRegion&) const = default;
};

} // namespace iseg
