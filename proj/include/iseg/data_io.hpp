#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "iseg/tensor.hpp"
#include "iseg/types.hpp"

namespace iseg {

enum class ShapeKind { disk, rect, blob, ring };

const char* to_string(ShapeKind k);
ShapeKind shape_kind_from_string(const std::string& s);

struct SceneConfig {
    int height = 96;
    int width = 144;
    double noise_sigma = 0.05;
    int max_distractors = 3;
    double min_area = 0.01; // fraction of the frame
    double max_area = 0.60;
    std::optional<ShapeKind> kind; // unset: drawn uniformly

    void validate() const;
};

struct SceneMeta {
    std::string id;
    ShapeKind kind = ShapeKind::disk;
    std::vector<double> params; // kind-specific geometry, see generate_scene
    std::uint64_t seed = 0;
    int distractors = 0;
};

struct SyntheticScene {
    Tensor image; // 3xHxW in [0,1]
    BinMask gt;
    SceneMeta meta;
};

using Dataset = std::vector<SyntheticScene>;

/// One step of the splitmix64 generator.
std::uint64_t splitmix64(std::uint64_t& state);
/// Seed of scene `index` in stream `stream` under `master`. Distinct (stream, index)
/// pairs give distinct seeds.
std::uint64_t scene_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

/// Draws one scene: a target object over a shaded background with 0..max
/// distractors and additive Gaussian noise. gt is the target's exact raster
/// (pixel centers on integer coordinates). Geometry in meta.params:
///   disk  {cy, cx, r}
///   rect  {cy, cx, half_h, half_w, angle}
///   blob  {cy1, cx1, r1, cy2, cx2, r2, ...}
///   ring  {cy, cx, r_outer, r_inner}
/// Rejection-samples the area bound, at most 100 attempts.
SyntheticScene generate_scene(std::mt19937_64& rng, const SceneConfig& cfg);
SyntheticScene generate_scene(std::uint64_t seed, const SceneConfig& cfg);

/// Decodes PNG or binary PNM (P5/P6) by magic number. Grey images are replicated
/// to three channels; alpha is dropped. 16-bit data is rejected with FormatError.
Tensor decode_image(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");
Tensor load_image(const std::filesystem::path& path);
/// Writes 8-bit RGB; `.ppm` selects PNM, anything else PNG.
void save_image(const std::filesystem::path& path, const Tensor& image);

/// Single-channel 0/255 masks; any other grey value is a FormatError.
BinMask decode_mask(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");
BinMask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const BinMask& mask);

std::vector<std::uint8_t> encode_png_rgb(const Tensor& image);
std::vector<std::uint8_t> encode_png_gray(int height, int width, const std::vector<std::uint8_t>& values);
/// Probability map quantized to 8 bits (round(255 p)).
std::vector<std::uint8_t> encode_prob_png(const ProbMask& prob);

std::uint8_t quantize(double v);

struct ManifestEntry {
    std::string image;
    std::string mask;
    std::string split; // "train" or "eval"
    std::uint64_t seed = 0;
    std::string kind;
    std::string image_hash;
    std::string mask_hash;
};

struct DatasetManifest {
    int height = 0;
    int width = 0;
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> entries;

    std::string hash() const;
};

/// Generates the train and eval splits (disjoint seed streams), writes PNG images
/// and masks under `out_dir`, and `out_dir/manifest.json`.
DatasetManifest build_dataset(int n_train, int n_eval, std::uint64_t seed, const std::filesystem::path& out_dir,
                              const SceneConfig& cfg = {});

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Loads every entry of one split ("train", "eval" or "" for all). Paths in the
/// manifest are relative to its directory.
Dataset load_split(const std::filesystem::path& manifest_path, const std::string& split);

/// In-memory equivalent of build_dataset for one split.
Dataset generate_split(int count, std::uint64_t seed, const std::string& split, const SceneConfig& cfg = {});

} // namespace iseg
