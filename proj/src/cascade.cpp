#include "iseg/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "iseg/checkpoint.hpp"
#include "iseg/errors.hpp"
#include "iseg/ops.hpp"

namespace iseg {

const char* to_string(Strategy s) {
    switch (s) {
    case Strategy::coarse_to_fine: return "coarse_to_fine";
    case Strategy::coarse_to_coarse: return "coarse_to_coarse";
    case Strategy::fine_to_fine: return "fine_to_fine";
    case Strategy::coarse_only: return "coarse_only";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    for (auto v : {Strategy::coarse_to_fine, Strategy::coarse_to_coarse, Strategy::fine_to_fine, Strategy::coarse_only})
        if (s == to_string(v)) return v;
    throw ArgumentError("unknown cascade strategy '" + s + "'");
}

void CascadeConfig::validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ArgumentError("zoom.threshold must lie in (0,1)");
    if (margin_min < 0.0 || margin_max < margin_min) throw ArgumentError("zoom margins need 0 <= min <= max");
    if (margin_scale < 0.0) throw ArgumentError("zoom.margin_scale must be >= 0");
    if (target_h < 4 || target_w < 4 || target_h % 4 || target_w % 4) {
        throw ArgumentError("zoom target resolution must be positive multiples of 4");
    }
}

double adaptive_margin(double area_fraction, const CascadeConfig& cfg) {
    return std::clamp(cfg.margin_scale * (1.0 - area_fraction), cfg.margin_min, cfg.margin_max);
}

namespace {

// Grows [lo, lo+len) to at least `min_len` around its center, kept inside [0, limit).
void widen(int& lo, int& len, int min_len, int limit) {
    if (len >= min_len) return;
    if (limit <= min_len) {
        lo = 0;
        len = limit;
        return;
    }
    const int extra = min_len - len;
    lo -= extra / 2;
    len = min_len;
    lo = std::clamp(lo, 0, limit - len);
}

} // namespace

std::optional<ZoomRegion> adaptive_box(const ProbMask& coarse, const CascadeConfig& cfg) {
    const int h = coarse.height, w = coarse.width;
    int r0 = h, r1 = -1, c0 = w, c1 = -1;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (coarse.at(r, c) < cfg.threshold) continue;
            r0 = std::min(r0, r), r1 = std::max(r1, r);
            c0 = std::min(c0, c), c1 = std::max(c1, c);
        }
    }
    if (r1 < 0) return std::nullopt;
    const int box_h = r1 - r0 + 1, box_w = c1 - c0 + 1;
    const double s = double(box_h) * box_w / (double(h) * w);
    const double grow = adaptive_margin(s, cfg) * std::max(box_h, box_w);
    int top = std::max(0, static_cast<int>(std::floor(r0 - grow)));
    int left = std::max(0, static_cast<int>(std::floor(c0 - grow)));
    const int bottom = std::min(h - 1, static_cast<int>(std::ceil(r1 + grow)));
    const int right = std::min(w - 1, static_cast<int>(std::ceil(c1 + grow)));
    int height = bottom - top + 1, width = right - left + 1;
    widen(top, height, ZoomRegion::kMinExtent, h);
    widen(left, width, ZoomRegion::kMinExtent, w);
    return ZoomRegion{top, left, height, width, cfg.target_h, cfg.target_w};
}

SessionState SessionState::start(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("session image must be 3xHxW, got " + shape_str(image.shape()));
    }
    SessionState s;
    s.image = image;
    s.prev_prob = ProbMask(static_cast<int>(image.dim(1)), static_cast<int>(image.dim(2)));
    return s;
}

SessionState SessionState::snapshot() const {
    SessionState s = *this;
    s.image = image.clone();
    return s;
}

bool SessionState::operator==(const SessionState& o) const {
    if (image.shape() != o.image.shape()) return false;
    if (!std::equal(image.data().begin(), image.data().end(), o.image.data().begin())) return false;
    return clicks == o.clicks && prev_prob == o.prev_prob && step == o.step && last_region == o.last_region;
}

Tensor crop_image(const Tensor& image, const ZoomRegion& region) {
    const std::size_t ch = image.dim(0);
    const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    Tensor out({ch, static_cast<std::size_t>(region.target_h), static_cast<std::size_t>(region.target_w)});
    auto o = out.data();
    const auto src = image.data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::size_t k = 0;
    for (std::size_t c = 0; c < ch; ++c) {
        const auto p = src.subspan(c * plane, plane);
        for (int i = 0; i < region.target_h; ++i)
            for (int j = 0; j < region.target_w; ++j)
                o[k++] = ops::sample_bilinear(p, h, w, region.source_row(i), region.source_col(j));
    }
    return out;
}

ProbMask crop_plane(const ProbMask& plane, const ZoomRegion& region) {
    ProbMask out(region.target_h, region.target_w);
    for (int i = 0; i < region.target_h; ++i)
        for (int j = 0; j < region.target_w; ++j)
            out.at(i, j) = ops::sample_bilinear(plane.data, plane.height, plane.width, region.source_row(i),
                                                region.source_col(j));
    return out;
}

std::optional<ZoomedInput> zoom_in(const SessionState& session, const ProbMask& coarse, const CascadeConfig& cfg) {
    require_same_shape(coarse, session.prev_prob, "zoom_in");
    const auto region = adaptive_box(coarse, cfg);
    if (!region) return std::nullopt;
    return ZoomedInput{crop_image(session.image, *region), crop_plane(coarse, *region),
                       map_clicks_to_crop(session.clicks, *region), *region};
}

ProbMask remap_to_full(const ProbMask& crop, const ZoomRegion& region, int full_h, int full_w,
                       const ProbMask& background) {
    if (const auto bad = region.violation(full_h, full_w); !bad.empty()) throw ContractError("remap_to_full: " + bad);
    if (crop.height != region.target_h || crop.width != region.target_w) {
        throw DimensionError("remap_to_full: crop does not match the region's target resolution");
    }
    if (background.height != full_h || background.width != full_w) {
        throw DimensionError("remap_to_full: background does not match the frame");
    }
    ProbMask out = background;
    for (int r = region.top; r < region.top + region.height; ++r)
        for (int c = region.left; c < region.left + region.width; ++c)
            out.at(r, c) = ops::sample_bilinear(crop.data, crop.height, crop.width, region.crop_row(r),
                                                region.crop_col(c));
    return out;
}

Predictor model_predictor(const ModelParams& params) {
    return [params](const Tensor& image, const ProbMask& prev, const ClickSet& clicks) {
        return predict(params, image, prev, clicks);
    };
}

void check_click(const SessionState& session, const Click& click) {
    if (!session.prev_prob.contains(click.row, click.col)) {
        throw OutOfBoundsError("click (" + std::to_string(click.row) + ", " + std::to_string(click.col) +
                               ") outside " + std::to_string(session.height()) + "x" +
                               std::to_string(session.width()) + " image");
    }
    for (const auto& c : session.clicks) {
        if (c.row == click.row && c.col == click.col) {
            throw DuplicateClickError("pixel (" + std::to_string(click.row) + ", " + std::to_string(click.col) +
                                      ") already clicked at step " + std::to_string(c.step));
        }
    }
}

StepResult interactive_step(SessionState& session, Click click, const Predictor& coarse, const Predictor& fine,
                            const CascadeConfig& cfg) {
    check_click(session, click);
    click.step = session.step + 1;
    SessionState next = session;
    next.clicks.push_back(click);
    next.step = click.step;

    const Predictor& first = cfg.strategy == Strategy::fine_to_fine ? fine : coarse;
    const Predictor& second = cfg.strategy == Strategy::coarse_to_coarse ? coarse : fine;

    StepResult res;
    res.coarse = first(next.image, next.prev_prob, next.clicks);
    res.prob = res.coarse;
    if (cfg.strategy != Strategy::coarse_only) {
        if (auto z = zoom_in(next, res.coarse, cfg)) {
            const auto crop_prob = second(z->image, z->prob, z->clicks.clicks);
            res.prob = remap_to_full(crop_prob, z->region, next.height(), next.width(), res.coarse);
            res.region = z->region;
        }
    }
    next.prev_prob = res.prob;
    next.last_region = res.region;
    session = std::move(next);
    return res;
}

Predictor CascadeModel::coarse_predictor() const { return model_predictor(coarse); }

Predictor CascadeModel::fine_predictor() const { return model_predictor(fine ? *fine : coarse); }

void save_cascade(const std::filesystem::path& path, const CascadeModel& model) {
    NamedTensors all;
    for (const auto& [n, t] : model.coarse.tensors()) all.emplace_back("coarse/" + n, t);
    if (model.fine)
        for (const auto& [n, t] : model.fine->tensors()) all.emplace_back("fine/" + n, t);
    const auto bytes = encode_checkpoint(all);
    write_file_bytes(path, bytes);
    nlohmann::json side{{"format", "CPKT1"},
                        {"coarse", model_config_to_json(model.coarse.config())},
                        {"fine", model.fine ? model_config_to_json(model.fine->config()) : nlohmann::json()},
                        {"checkpoint_hash", hex64(fnv1a(bytes.data(), bytes.size()))}};
    std::ofstream js(path.string() + ".json");
    if (!js) throw IoError("cannot write sidecar for " + path.string());
    js << side.dump(2) << '\n';
}

CascadeModel load_cascade(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
    const std::filesystem::path side_path = path.string() + ".json";
    if (!std::filesystem::exists(side_path)) throw IoError("checkpoint sidecar not found: " + side_path.string());
    nlohmann::json side;
    try {
        std::ifstream in(side_path);
        side = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(side_path.string() + ": " + e.what());
    }
    if (!side.contains("coarse")) throw FormatError(side_path.string() + ": not a cascade checkpoint");
    NamedTensors coarse, fine;
    for (auto& [n, t] : load_checkpoint(path)) {
        if (n.rfind("coarse/", 0) == 0) coarse.emplace_back(n.substr(7), t);
        else if (n.rfind("fine/", 0) == 0) fine.emplace_back(n.substr(5), t);
        else throw FormatError("unexpected tensor '" + n + "' in cascade checkpoint");
    }
    CascadeModel m;
    m.coarse = ModelParams::from_tensors(model_config_from_json(side["coarse"]), std::move(coarse));
    if (side.contains("fine") && !side["fine"].is_null()) {
        m.fine = ModelParams::from_tensors(model_config_from_json(side["fine"]), std::move(fine));
    } else if (!fine.empty()) {
        throw FormatError("cascade checkpoint holds fine tensors but no fine architecture");
    }
    return m;
}

} // namespace iseg
