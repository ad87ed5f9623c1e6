#include "iseg/data_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "iseg/checkpoint.hpp"
#include "iseg/errors.hpp"

namespace iseg {

const char* to_string(ShapeKind k) {
    switch (k) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::rect: return "rect";
    case ShapeKind::blob: return "blob";
    case ShapeKind::ring: return "ring";
    }
    return "?";
}

ShapeKind shape_kind_from_string(const std::string& s) {
    for (auto k : {ShapeKind::disk, ShapeKind::rect, ShapeKind::blob, ShapeKind::ring})
        if (s == to_string(k)) return k;
    throw ArgumentError("unknown shape kind '" + s + "'");
}

void SceneConfig::validate() const {
    if (height < 64 || width < 96) throw ArgumentError("scene size must be at least 64x96");
    if (height % 4 || width % 4) throw ArgumentError("scene extents must be multiples of 4");
    if (noise_sigma < 0.0) throw ArgumentError("noise sigma must be >= 0");
    if (max_distractors < 0) throw ArgumentError("max_distractors must be >= 0");
    if (!(min_area > 0.0 && min_area < max_area && max_area <= 1.0)) throw ArgumentError("bad area bounds");
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t scene_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    // splitmix64 is a bijection of its counter, so distinct counters never collide.
    std::uint64_t counter = master + (index * 2 + stream) * 0x9e3779b97f4a7c15ULL;
    return splitmix64(counter);
}

namespace {

using Color = std::array<double, 3>;

double color_distance(const Color& a, const Color& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

Color draw_color(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    return {u(rng), u(rng), u(rng)};
}

Color draw_distinct(std::mt19937_64& rng, const Color& from, double min_dist) {
    for (int i = 0; i < 1000; ++i) {
        const auto c = draw_color(rng, 0.0, 1.0);
        if (color_distance(c, from) >= min_dist) return c;
    }
    // Fallback: push each channel to the far side of the reference.
    return {from[0] < 0.5 ? 0.95 : 0.05, from[1] < 0.5 ? 0.95 : 0.05, from[2] < 0.5 ? 0.95 : 0.05};
}

BinMask raster(ShapeKind kind, const std::vector<double>& p, int h, int w) {
    BinMask m(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            bool in = false;
            switch (kind) {
            case ShapeKind::disk: {
                const double dy = y - p[0], dx = x - p[1];
                in = dy * dy + dx * dx <= p[2] * p[2];
                break;
            }
            case ShapeKind::rect: {
                const double dy = y - p[0], dx = x - p[1];
                const double c = std::cos(p[4]), s = std::sin(p[4]);
                const double u = c * dy + s * dx, v = -s * dy + c * dx;
                in = std::abs(u) <= p[2] && std::abs(v) <= p[3];
                break;
            }
            case ShapeKind::blob:
                for (std::size_t k = 0; k + 2 < p.size() && !in; k += 3) {
                    const double dy = y - p[k], dx = x - p[k + 1];
                    in = dy * dy + dx * dx <= p[k + 2] * p[k + 2];
                }
                break;
            case ShapeKind::ring: {
                const double dy = y - p[0], dx = x - p[1];
                const double d2 = dy * dy + dx * dx;
                in = d2 <= p[2] * p[2] && d2 > p[3] * p[3];
                break;
            }
            }
            m.at(y, x) = in;
        }
    }
    return m;
}

std::vector<double> draw_geometry(ShapeKind kind, std::mt19937_64& rng, int h, int w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    const double md = std::min(h, w);
    switch (kind) {
    case ShapeKind::disk: {
        const double r = uni(0.08, 0.38) * md;
        return {uni(r, h - 1 - r), uni(r, w - 1 - r), r};
    }
    case ShapeKind::rect:
        return {uni(0.2, 0.8) * h, uni(0.2, 0.8) * w, uni(0.06, 0.35) * md, uni(0.06, 0.35) * md,
                uni(0.0, std::numbers::pi)};
    case ShapeKind::blob: {
        const int k = std::uniform_int_distribution<int>(2, 4)(rng);
        std::vector<double> p;
        double cy = uni(0.3, 0.7) * h, cx = uni(0.3, 0.7) * w;
        double r = uni(0.08, 0.2) * md;
        p.insert(p.end(), {cy, cx, r});
        for (int i = 1; i < k; ++i) {
            const std::size_t anchor = 3 * std::uniform_int_distribution<int>(0, i - 1)(rng);
            const double nr = uni(0.06, 0.2) * md;
            const double dist = uni(0.3, 0.8) * (p[anchor + 2] + nr);
            const double ang = uni(0.0, 2.0 * std::numbers::pi);
            p.insert(p.end(), {p[anchor] + dist * std::sin(ang), p[anchor + 1] + dist * std::cos(ang), nr});
        }
        return p;
    }
    case ShapeKind::ring: {
        const double outer = uni(0.18, 0.45) * md;
        const double inner = std::min(outer * uni(0.45, 0.7), outer - 4.0);
        return {uni(outer, h - 1 - outer), uni(outer, w - 1 - outer), outer, inner};
    }
    }
    return {};
}

} // namespace

SyntheticScene generate_scene(std::mt19937_64& rng, const SceneConfig& cfg) {
    cfg.validate();
    const int h = cfg.height, w = cfg.width;
    const double frame = double(h) * w;
    std::uniform_int_distribution<int> kind_pick(0, 3);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    SyntheticScene scene;
    for (int attempt = 0;; ++attempt) {
        if (attempt == 100) throw ArgumentError("generate_scene: no target met the area bounds in 100 attempts");
        const ShapeKind kind = cfg.kind ? *cfg.kind : static_cast<ShapeKind>(kind_pick(rng));
        auto geom = draw_geometry(kind, rng, h, w);
        auto gt = raster(kind, geom, h, w);
        const double area = double(count_foreground(gt)) / frame;
        if (area < cfg.min_area || area > cfg.max_area) continue;
        scene.gt = std::move(gt);
        scene.meta.kind = kind;
        scene.meta.params = std::move(geom);
        break;
    }

    const Color bg = draw_color(rng, 0.15, 0.85);
    const double gy = (u(rng) - 0.5) * 0.3, gx = (u(rng) - 0.5) * 0.3;
    const Color target = draw_distinct(rng, bg, 0.35);

    Tensor image({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                image.at(c, y, x) = bg[c] + gy * (double(y) / h - 0.5) + gx * (double(x) / w - 0.5);

    const int n_distractors = std::uniform_int_distribution<int>(0, cfg.max_distractors)(rng);
    for (int d = 0; d < n_distractors; ++d) {
        const ShapeKind kind = u(rng) < 0.5 ? ShapeKind::disk : ShapeKind::rect;
        auto geom = draw_geometry(kind, rng, h, w);
        // Distractors are kept smaller than typical targets.
        if (kind == ShapeKind::disk) geom[2] *= 0.6;
        else geom[2] *= 0.6, geom[3] *= 0.6;
        const auto mask = raster(kind, geom, h, w);
        const Color col = draw_distinct(rng, bg, 0.25);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (mask.at(y, x))
                    for (int c = 0; c < 3; ++c) image.at(c, y, x) = col[c];
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (scene.gt.at(y, x))
                for (int c = 0; c < 3; ++c) image.at(c, y, x) = target[c];

    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (double& v : image.data()) v = std::clamp(v + (cfg.noise_sigma > 0 ? noise(rng) : 0.0), 0.0, 1.0);
    scene.image = std::move(image);
    scene.meta.distractors = n_distractors;
    return scene;
}

SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
    std::mt19937_64 rng(seed);
    auto s = generate_scene(rng, cfg);
    s.meta.seed = seed;
    return s;
}

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// ---- raster codecs -------------------------------------------------------

namespace {

struct Raster {
    int height = 0;
    int width = 0;
    int channels = 0; // 1 or 3
    std::vector<std::uint8_t> pixels;
};

bool is_png(const std::vector<std::uint8_t>& b) {
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

bool is_pnm(const std::vector<std::uint8_t>& b) { return b.size() >= 2 && b[0] == 'P' && (b[1] == '5' || b[1] == '6'); }

Raster decode_png(const std::vector<std::uint8_t>& bytes, bool want_gray, const std::string& origin) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw FormatError(origin + ": cannot decode PNG (" + img.message + ")");
    }
    if (img.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&img);
        throw FormatError(origin + ": 16-bit PNG is not supported, expected 8 bits per channel");
    }
    if (want_gray && (img.format & PNG_FORMAT_FLAG_COLOR)) {
        png_image_free(&img);
        throw FormatError(origin + ": mask must be single-channel");
    }
    img.format = want_gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Raster r{static_cast<int>(img.height), static_cast<int>(img.width), want_gray ? 1 : 3, {}};
    r.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, r.pixels.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw FormatError(origin + ": corrupt PNG (" + msg + ")");
    }
    return r;
}

Raster decode_pnm(const std::vector<std::uint8_t>& b, const std::string& origin) {
    std::size_t pos = 2;
    const auto skip = [&] {
        while (pos < b.size()) {
            if (b[pos] == '#') {
                while (pos < b.size() && b[pos] != '\n') ++pos;
            } else if (std::isspace(b[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    const auto number = [&] {
        skip();
        if (pos >= b.size() || !std::isdigit(b[pos])) throw FormatError(origin + ": malformed PNM header");
        long v = 0;
        while (pos < b.size() && std::isdigit(b[pos])) {
            v = v * 10 + (b[pos++] - '0');
            if (v > 1 << 20) throw FormatError(origin + ": PNM dimension too large");
        }
        return static_cast<int>(v);
    };
    Raster r;
    r.channels = b[1] == '6' ? 3 : 1;
    r.width = number();
    r.height = number();
    const int maxval = number();
    if (maxval != 255) throw FormatError(origin + ": PNM maxval " + std::to_string(maxval) + ", expected 8-bit (255)");
    if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError(origin + ": malformed PNM header");
    ++pos;
    const std::size_t need = static_cast<std::size_t>(r.width) * r.height * r.channels;
    if (r.width < 1 || r.height < 1) throw FormatError(origin + ": empty PNM");
    if (b.size() - pos < need) throw FormatError(origin + ": truncated PNM data");
    r.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(pos), b.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return r;
}

Raster decode_any(const std::vector<std::uint8_t>& bytes, bool want_gray, const std::string& origin) {
    if (is_png(bytes)) return decode_png(bytes, want_gray, origin);
    if (is_pnm(bytes)) {
        auto r = decode_pnm(bytes, origin);
        if (want_gray && r.channels != 1) throw FormatError(origin + ": mask must be single-channel (P5)");
        if (!want_gray && r.channels == 1) {
            std::vector<std::uint8_t> rgb(r.pixels.size() * 3);
            for (std::size_t i = 0; i < r.pixels.size(); ++i) rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = r.pixels[i];
            r.pixels = std::move(rgb);
            r.channels = 3;
        }
        return r;
    }
    throw FormatError(origin + ": unrecognized image format (bad magic number)");
}

std::vector<std::uint8_t> encode_png(int h, int w, bool gray, const std::vector<std::uint8_t>& pixels) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
        throw FormatError(std::string("PNG encode failed: ") + img.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
        throw FormatError(std::string("PNG encode failed: ") + img.message);
    }
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> encode_pnm(int h, int w, bool gray, const std::vector<std::uint8_t>& pixels) {
    const std::string header = std::string(gray ? "P5" : "P6") + "\n" + std::to_string(w) + " " + std::to_string(h) +
                               "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), pixels.begin(), pixels.end());
    return out;
}

bool wants_pnm(const std::filesystem::path& p) {
    const auto ext = p.extension().string();
    return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

std::vector<std::uint8_t> read_or_throw(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("file not found: " + path.string());
    return read_file_bytes(path);
}

} // namespace

Tensor decode_image(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    const auto r = decode_any(bytes, false, origin);
    const std::size_t h = r.height, w = r.width;
    Tensor t({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = r.pixels[(y * w + x) * 3 + c] / 255.0;
    return t;
}

Tensor load_image(const std::filesystem::path& path) { return decode_image(read_or_throw(path), path.string()); }

std::vector<std::uint8_t> encode_png_rgb(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("image must be 3xHxW");
    const std::size_t h = image.dim(1), w = image.dim(2);
    std::vector<std::uint8_t> px(h * w * 3);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) px[(y * w + x) * 3 + c] = quantize(image.at(c, y, x));
    return encode_png(static_cast<int>(h), static_cast<int>(w), false, px);
}

void save_image(const std::filesystem::path& path, const Tensor& image) {
    if (!wants_pnm(path)) {
        write_file_bytes(path, encode_png_rgb(image));
        return;
    }
    const std::size_t h = image.dim(1), w = image.dim(2);
    std::vector<std::uint8_t> px(h * w * 3);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) px[(y * w + x) * 3 + c] = quantize(image.at(c, y, x));
    write_file_bytes(path, encode_pnm(static_cast<int>(h), static_cast<int>(w), false, px));
}

BinMask decode_mask(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    const auto r = decode_any(bytes, true, origin);
    BinMask m(r.height, r.width);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto v = r.pixels[i];
        if (v != 0 && v != 255) {
            throw FormatError(origin + ": mask value " + std::to_string(v) + " is neither 0 nor 255");
        }
        m.data[i] = v ? 1 : 0;
    }
    return m;
}

BinMask load_mask(const std::filesystem::path& path) { return decode_mask(read_or_throw(path), path.string()); }

std::vector<std::uint8_t> encode_png_gray(int height, int width, const std::vector<std::uint8_t>& values) {
    return encode_png(height, width, true, values);
}

void save_mask(const std::filesystem::path& path, const BinMask& mask) {
    std::vector<std::uint8_t> px(mask.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.data[i] ? 255 : 0;
    write_file_bytes(path, wants_pnm(path) ? encode_pnm(mask.height, mask.width, true, px)
                                           : encode_png(mask.height, mask.width, true, px));
}

std::vector<std::uint8_t> encode_prob_png(const ProbMask& prob) {
    std::vector<std::uint8_t> px(prob.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = quantize(prob.data[i]);
    return encode_png(prob.height, prob.width, true, px);
}

// ---- datasets --------------------------------------------------------------

std::string DatasetManifest::hash() const {
    std::string blob = std::to_string(height) + "x" + std::to_string(width) + ":" + std::to_string(seed);
    for (const auto& e : entries) {
        blob += "|" + e.image + "," + e.mask + "," + e.split + "," + std::to_string(e.seed) + "," + e.kind + "," +
                e.image_hash + "," + e.mask_hash;
    }
    return hex64(fnv1a(reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()));
}

Dataset generate_split(int count, std::uint64_t seed, const std::string& split, const SceneConfig& cfg) {
    if (count < 0) throw ArgumentError("scene count must be >= 0");
    const std::uint64_t stream = split == "eval" ? 1 : 0;
    Dataset out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        auto s = generate_scene(scene_seed(seed, stream, static_cast<std::uint64_t>(i)), cfg);
        char id[32];
        std::snprintf(id, sizeof id, "%s_%04d", split.c_str(), i);
        s.meta.id = id;
        out.push_back(std::move(s));
    }
    return out;
}

DatasetManifest build_dataset(int n_train, int n_eval, std::uint64_t seed, const std::filesystem::path& out_dir,
                              const SceneConfig& cfg) {
    if (n_train < 0 || n_eval < 0) throw ArgumentError("scene counts must be >= 0");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    std::filesystem::create_directories(out_dir / "masks", ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    DatasetManifest m{cfg.height, cfg.width, seed, {}};
    for (const auto& [split, count] : {std::pair<std::string, int>{"train", n_train}, {"eval", n_eval}}) {
        for (auto& s : generate_split(count, seed, split, cfg)) {
            const auto img_bytes = encode_png_rgb(s.image);
            std::vector<std::uint8_t> px(s.gt.size());
            for (std::size_t i = 0; i < px.size(); ++i) px[i] = s.gt.data[i] ? 255 : 0;
            const auto mask_bytes = encode_png_gray(s.gt.height, s.gt.width, px);
            ManifestEntry e;
            e.image = "images/" + s.meta.id + ".png";
            e.mask = "masks/" + s.meta.id + ".png";
            e.split = split;
            e.seed = s.meta.seed;
            e.kind = to_string(s.meta.kind);
            e.image_hash = hex64(fnv1a(img_bytes.data(), img_bytes.size()));
            e.mask_hash = hex64(fnv1a(mask_bytes.data(), mask_bytes.size()));
            write_file_bytes(out_dir / e.image, img_bytes);
            write_file_bytes(out_dir / e.mask, mask_bytes);
            m.entries.push_back(std::move(e));
        }
    }
    save_manifest(out_dir / "manifest.json", m);
    return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    nlohmann::json j{{"height", m.height}, {"width", m.width}, {"seed", m.seed}, {"hash", m.hash()}};
    auto& arr = j["entries"] = nlohmann::json::array();
    for (const auto& e : m.entries) {
        arr.push_back({{"image", e.image},
                       {"mask", e.mask},
                       {"split", e.split},
                       {"seed", e.seed},
                       {"kind", e.kind},
                       {"image_hash", e.image_hash},
                       {"mask_hash", e.mask_hash}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("manifest not found: " + path.string());
    try {
        std::ifstream in(path);
        const auto j = nlohmann::json::parse(in);
        DatasetManifest m;
        m.height = j.at("height").get<int>();
        m.width = j.at("width").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& e : j.at("entries")) {
            m.entries.push_back({e.at("image").get<std::string>(), e.at("mask").get<std::string>(),
                                 e.at("split").get<std::string>(), e.value("seed", std::uint64_t{0}),
                                 e.value("kind", std::string()), e.value("image_hash", std::string()),
                                 e.value("mask_hash", std::string())});
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Dataset load_split(const std::filesystem::path& manifest_path, const std::string& split) {
    const auto m = load_manifest(manifest_path);
    const auto root = manifest_path.parent_path();
    Dataset out;
    for (const auto& e : m.entries) {
        if (!split.empty() && e.split != split) continue;
        SyntheticScene s;
        s.image = load_image(root / e.image);
        s.gt = load_mask(root / e.mask);
        if (s.gt.height != static_cast<int>(s.image.dim(1)) || s.gt.width != static_cast<int>(s.image.dim(2))) {
            throw FormatError(e.mask + ": mask size differs from its image");
        }
        s.meta.id = std::filesystem::path(e.image).stem().string();
        s.meta.seed = e.seed;
        if (!e.kind.empty()) s.meta.kind = shape_kind_from_string(e.kind);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace iseg
