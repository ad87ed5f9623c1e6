#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iseg/errors.hpp"

namespace iseg {

enum class Polarity : std::uint8_t { positive = 0, negative = 1 };

const char* to_string(Polarity p);
Polarity polarity_from_string(const std::string& s);

/// One user annotation in image pixel coordinates. `step` is the 1-based
/// interaction index at which the click was placed.
struct Click {
    int row = 0;
    int col = 0;
    Polarity polarity = Polarity::positive;
    int step = 1;

    bool operator==(const Click&) const = default;
};

using ClickSet = std::vector<Click>;

/// Row-major HxW plane.
template <class T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    T& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
    const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
    bool contains(int r, int c) const { return r >= 0 && c >= 0 && r < height && c < width; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }
    bool operator==(const Grid&) const = default;
};

/// Per-pixel foreground probability.
using ProbMask = Grid<double>;
/// Binary mask; every entry is 0 or 1.
using BinMask = Grid<std::uint8_t>;

BinMask binarize(const ProbMask& prob, double threshold = 0.5);
std::size_t count_foreground(const BinMask& mask);

inline void require_same_shape(const auto& a, const auto& b, const char* op) {
    if (a.height != b.height) throw DimensionError(std::string(op) + ": height axis mismatch");
    if (a.width != b.width) throw DimensionError(std::string(op) + ": width axis mismatch");
}

} // namespace iseg
