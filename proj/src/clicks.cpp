#include "iseg/clicks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "iseg/errors.hpp"

namespace iseg {

const char* to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

Polarity polarity_from_string(const std::string& s) {
    if (s == "positive" || s == "pos" || s == "+") return Polarity::positive;
    if (s == "negative" || s == "neg" || s == "-") return Polarity::negative;
    throw ArgumentError("unknown click polarity '" + s + "'");
}

BinMask binarize(const ProbMask& prob, double threshold) {
    BinMask out(prob.height, prob.width);
    for (std::size_t i = 0; i < prob.data.size(); ++i) out.data[i] = prob.data[i] >= threshold ? 1 : 0;
    return out;
}

std::size_t count_foreground(const BinMask& mask) {
    return static_cast<std::size_t>(std::count(mask.data.begin(), mask.data.end(), std::uint8_t{1}));
}

GuidanceMaps encode_clicks(const ClickSet& clicks, int height, int width, int radius) {
    if (radius < 0) throw ArgumentError("encode_clicks: radius must be >= 0");
    GuidanceMaps maps{BinMask(height, width), BinMask(height, width)};
    const long r2 = static_cast<long>(radius) * radius;
    for (const auto& c : clicks) {
        if (c.row < 0 || c.row >= height || c.col < 0 || c.col >= width) {
            throw OutOfBoundsError("encode_clicks: click (" + std::to_string(c.row) + ", " + std::to_string(c.col) +
                                ") outside " + std::to_string(height) + "x" + std::to_string(width) + " image");
        }
        BinMask& target = c.polarity == Polarity::positive ? maps.pos : maps.neg;
        for (int r = std::max(0, c.row - radius); r <= std::min(height - 1, c.row + radius); ++r) {
            for (int q = std::max(0, c.col - radius); q <= std::min(width - 1, c.col + radius); ++q) {
                const long dr = r - c.row, dc = q - c.col;
                if (dr * dr + dc * dc <= r2) target.at(r, q) = 1;
            }
        }
    }
    return maps;
}

namespace {

std::vector<ErrorRegion> components_of(const BinMask& mask, ErrorKind kind) {
    std::vector<ErrorRegion> out;
    std::vector<std::uint8_t> seen(mask.size(), 0);
    std::vector<int> stack;
    const int h = mask.height, w = mask.width;
    for (int start = 0; start < h * w; ++start) {
        if (!mask.data[start] || seen[start]) continue;
        ErrorRegion reg;
        reg.kind = kind;
        reg.top = h, reg.left = w, reg.bottom = -1, reg.right = -1;
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            reg.pixels.push_back(p);
            const int r = p / w, c = p % w;
            reg.top = std::min(reg.top, r), reg.bottom = std::max(reg.bottom, r);
            reg.left = std::min(reg.left, c), reg.right = std::max(reg.right, c);
            const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& n : nbr) {
                if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
                const int q = n[0] * w + n[1];
                if (mask.data[q] && !seen[q]) {
                    seen[q] = 1;
                    stack.push_back(q);
                }
            }
        }
        std::sort(reg.pixels.begin(), reg.pixels.end());
        out.push_back(std::move(reg));
    }
    return out;
}

// Exact 1-D squared distance transform (lower envelope of parabolas).
void distance_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    const auto intersect = [&](int q, int p) {
        return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
    };
    for (int q = 1; q < n; ++q) {
        double s = intersect(q, v[k]);
        while (s <= z[k]) {
            --k;
            s = intersect(q, v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

} // namespace

std::vector<long> squared_distance_to_complement(const BinMask& mask) {
    // Pad by one background pixel so the image border counts as outside.
    const int h = mask.height + 2, w = mask.width + 2;
    constexpr double big = 1e20;
    std::vector<double> grid(static_cast<std::size_t>(h) * w, 0.0);
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (mask.at(r, c)) grid[(r + 1) * w + (c + 1)] = big;
    const int n = std::max(h, w);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    for (int c = 0; c < w; ++c) {
        f.resize(h), d.resize(h);
        for (int r = 0; r < h; ++r) f[r] = grid[r * w + c];
        distance_1d(f, d, v, z);
        for (int r = 0; r < h; ++r) grid[r * w + c] = d[r];
    }
    for (int r = 0; r < h; ++r) {
        f.resize(w), d.resize(w);
        for (int c = 0; c < w; ++c) f[c] = grid[r * w + c];
        distance_1d(f, d, v, z);
        for (int c = 0; c < w; ++c) grid[r * w + c] = d[c];
    }
    std::vector<long> out(mask.size(), 0);
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (mask.at(r, c)) out[r * mask.width + c] = static_cast<long>(std::llround(grid[(r + 1) * w + (c + 1)]));
    return out;
}

std::vector<ErrorRegion> error_regions(const BinMask& pred, const BinMask& gt) {
    require_same_shape(pred, gt, "error_regions");
    BinMask fp(pred.height, pred.width), fn(pred.height, pred.width);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        fp.data[i] = pred.data[i] && !gt.data[i];
        fn.data[i] = !pred.data[i] && gt.data[i];
    }
    auto out = components_of(fp, ErrorKind::false_positive);
    auto neg = components_of(fn, ErrorKind::false_negative);
    out.insert(out.end(), std::make_move_iterator(neg.begin()), std::make_move_iterator(neg.end()));
    std::stable_sort(out.begin(), out.end(), [](const ErrorRegion& a, const ErrorRegion& b) {
        if (a.size() != b.size()) return a.size() > b.size();
        if (a.top != b.top) return a.top < b.top;
        return a.left < b.left;
    });
    return out;
}

std::optional<Click> simulate_next_click(const BinMask& pred, const BinMask& gt, const ClickSet& existing) {
    const auto regions = error_regions(pred, gt);
    if (regions.empty()) return std::nullopt;
    std::unordered_set<int> taken;
    for (const auto& c : existing) taken.insert(c.row * gt.width + c.col);
    for (const auto& reg : regions) {
        BinMask comp(gt.height, gt.width);
        for (int p : reg.pixels) comp.data[p] = 1;
        const auto dist = squared_distance_to_complement(comp);
        int best = -1;
        for (int p : reg.pixels) { // ascending flat index == lexicographic (row, col)
            if (taken.count(p)) continue;
            if (best < 0 || dist[p] > dist[best]) best = p;
        }
        if (best < 0) continue;
        Click c;
        c.row = best / gt.width;
        c.col = best % gt.width;
        c.polarity = reg.kind == ErrorKind::false_negative ? Polarity::positive : Polarity::negative;
        c.step = static_cast<int>(existing.size()) + 1;
        return c;
    }
    return std::nullopt;
}

CropClicks map_clicks_to_crop(const ClickSet& clicks, const ZoomRegion& region) {
    CropClicks out;
    for (std::size_t i = 0; i < clicks.size(); ++i) {
        const auto& c = clicks[i];
        if (!region.contains(c.row, c.col)) {
            out.dropped.push_back(i);
            continue;
        }
        Click m = c;
        m.row = std::clamp(static_cast<int>(std::lround(region.crop_row(c.row))), 0, region.target_h - 1);
        m.col = std::clamp(static_cast<int>(std::lround(region.crop_col(c.col))), 0, region.target_w - 1);
        out.clicks.push_back(m);
    }
    return out;
}

Click unmap_click_from_crop(const Click& click, const ZoomRegion& region) {
    Click c = click;
    c.row = std::clamp(static_cast<int>(std::lround(region.source_row(click.row))), region.top,
                       region.top + region.height - 1);
    c.col = std::clamp(static_cast<int>(std::lround(region.source_col(click.col))), region.left,
                       region.left + region.width - 1);
    return c;
}

std::string ZoomRegion::violation(int frame_h, int frame_w) const {
    // An axis shorter than the minimum extent is only allowed when the frame itself is.
    if (height < kMinExtent && height != frame_h) return "region height below minimum extent";
    if (width < kMinExtent && width != frame_w) return "region width below minimum extent";
    if (height < 1 || width < 1) return "empty region";
    if (top < 0 || left < 0) return "region starts outside the frame";
    if (top + height > frame_h || left + width > frame_w) return "region extends past the frame";
    if (target_h < 1 || target_w < 1) return "empty target resolution";
    return {};
}

void to_json(nlohmann::json& j, const Click& c) {
    j = nlohmann::json{{"row", c.row}, {"col", c.col}, {"polarity", to_string(c.polarity)}, {"step", c.step}};
}

void from_json(const nlohmann::json& j, Click& c) {
    c.row = j.at("row").get<int>();
    c.col = j.at("col").get<int>();
    c.polarity = polarity_from_string(j.at("polarity").get<std::string>());
    c.step = j.value("step", 1);
}

} // namespace iseg
