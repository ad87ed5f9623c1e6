#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "iseg/clicks.hpp"
#include "iseg/errors.hpp"
#include "iseg/ops.hpp"
#include "iseg/optim.hpp"
#include "iseg/training.hpp"
#include "test_support.hpp"

namespace iseg {
namespace {

SceneConfig small_scenes() {
    SceneConfig c;
    c.height = 64;
    c.width = 96;
    return c;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.model.c_low = 4;
    c.model.c_high = 6;
    c.epochs_coarse = 1;
    c.epochs_fine = 1;
    c.batch_size = 2;
    c.lr_fine = 1e-4;
    c.sampler.max_clicks = 3;
    return c;
}

bool same_bits(const ModelParams& a, const ModelParams& b) {
    if (a.tensors().size() != b.tensors().size()) return false;
    for (std::size_t i = 0; i < a.tensors().size(); ++i) {
        const auto x = a.tensors()[i].second.data(), y = b.tensors()[i].second.data();
        if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

TEST(ScheduledLr, TwoMilestoneDecay) {
    EXPECT_EQ(scheduled_lr(1e-3, 0, 30, 0.8, 0.95), 1e-3);
    EXPECT_EQ(scheduled_lr(1e-3, 23, 30, 0.8, 0.95), 1e-3);
    EXPECT_DOUBLE_EQ(scheduled_lr(1e-3, 24, 30, 0.8, 0.95), 1e-4);
    EXPECT_DOUBLE_EQ(scheduled_lr(1e-3, 28, 30, 0.8, 0.95), 1e-4);
    EXPECT_DOUBLE_EQ(scheduled_lr(1e-3, 29, 30, 0.8, 0.95), 1e-5);
}

TEST(TrainConfig, Validation) {
    EXPECT_NO_THROW(TrainConfig{}.validate());
    auto c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ArgumentError);
    c = TrainConfig{};
    c.lr_fine = 0.0;
    EXPECT_THROW(c.validate(), ArgumentError);
    c = TrainConfig{};
    c.milestone1 = 0.99;
    EXPECT_THROW(c.validate(), ArgumentError);
    EXPECT_EQ(TrainConfig{}.strategy, Strategy::coarse_to_fine);
    EXPECT_EQ(ablation_from_string("+FPM"), Ablation::fpm);
    EXPECT_TRUE(uses_iaf(Ablation::full));
    EXPECT_FALSE(uses_fpm(Ablation::iaf));
    EXPECT_THROW(ablation_from_string("half"), ArgumentError);
}

void check_click_contract(const SampledClicks& s, const BinMask& gt, const SamplerConfig& cfg) {
    ASSERT_GE(s.clicks.size(), 1u);
    ASSERT_LE(s.clicks.size(), static_cast<std::size_t>(cfg.max_clicks));
    EXPECT_EQ(s.clicks.front().polarity, Polarity::positive);
    for (std::size_t i = 0; i < s.clicks.size(); ++i) {
        const auto& c = s.clicks[i];
        EXPECT_EQ(c.step, static_cast<int>(i) + 1);
        for (std::size_t j = 0; j < i; ++j)
            EXPECT_FALSE(s.clicks[j].row == c.row && s.clicks[j].col == c.col) << "repeated pixel";
        if (c.polarity == Polarity::positive) {
            ASSERT_TRUE(gt.at(c.row, c.col)) << "positive click on background";
        } else {
            ASSERT_FALSE(gt.at(c.row, c.col)) << "negative click on foreground";
            if (!s.corrective) {
                long nearest = std::numeric_limits<long>::max();
                for (int y = 0; y < gt.height; ++y)
                    for (int x = 0; x < gt.width; ++x)
                        if (gt.at(y, x)) nearest = std::min(nearest, long(y - c.row) * (y - c.row) + long(x - c.col) * (x - c.col));
                EXPECT_GE(nearest, long(cfg.neg_min_distance) * cfg.neg_min_distance);
            }
        }
    }
}

TEST(SampleClicks, SingleClickFloor) {
    const auto scene = generate_scene(1, small_scenes());
    SamplerConfig cfg;
    cfg.max_clicks = 1;
    std::mt19937_64 rng(71);
    for (int t = 0; t < 50; ++t) {
        const auto s = sample_training_clicks(scene.gt, scene.image, nullptr, rng, cfg);
        ASSERT_EQ(s.clicks.size(), 1u);
        EXPECT_EQ(s.clicks[0].polarity, Polarity::positive);
        EXPECT_TRUE(scene.gt.at(s.clicks[0].row, s.clicks[0].col));
        EXPECT_EQ(count_foreground(binarize(s.prev_prob)), 0u);
    }
}

TEST(SampleClicks, ContractHoldsOverManyDraws) {
    // 10k draws split across random and corrective modes on a mix of shapes.
    SamplerConfig cfg;
    const auto data = generate_split(20, 3, "train", small_scenes());
    // A fixed, imperfect predictor: a disk around the first click, so corrective clicks occur.
    const Predictor stub = [](const Tensor& image, const ProbMask&, const ClickSet& clicks) {
        const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
        ProbMask p(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int dy = y - clicks.front().row, dx = x - clicks.front().col;
                p.at(y, x) = dy * dy + dx * dx <= 64 ? 0.9 : 0.1;
            }
        return p;
    };
    std::mt19937_64 rng(72);
    int corrective = 0, multi = 0;
    for (int t = 0; t < 10000; ++t) {
        const auto& scene = data[t % data.size()];
        const auto s = sample_training_clicks(scene.gt, scene.image, t % 2 ? &stub : nullptr, rng, cfg);
        check_click_contract(s, scene.gt, cfg);
        if (::testing::Test::HasFatalFailure()) return;
        corrective += s.corrective;
        multi += s.clicks.size() > 1;
    }
    EXPECT_GT(corrective, 1000);
    EXPECT_GT(multi, 5000);
}

TEST(SampleClicks, FirstClickIsDeepInsideTheObject) {
    BinMask gt(40, 40);
    for (int y = 5; y < 35; ++y)
        for (int x = 5; x < 35; ++x) gt.at(y, x) = 1;
    const auto depth = squared_distance_to_complement(gt);
    const long max_d = *std::max_element(depth.begin(), depth.end());
    std::mt19937_64 rng(73);
    for (int t = 0; t < 200; ++t) {
        const auto s = sample_training_clicks(gt, Tensor({3, 40, 40}), nullptr, rng, SamplerConfig{});
        const auto& c = s.clicks.front();
        EXPECT_GE(4 * depth[c.row * 40 + c.col], max_d);
    }
}

TEST(SampleClicks, DeterministicUnderSeed) {
    const auto scene = generate_scene(5, small_scenes());
    const auto p = ModelParams::init(tiny_config().model);
    const auto pred = model_predictor(p);
    std::mt19937_64 a(74), b(74);
    for (int t = 0; t < 10; ++t) {
        const auto x = sample_training_clicks(scene.gt, scene.image, &pred, a, SamplerConfig{});
        const auto y = sample_training_clicks(scene.gt, scene.image, &pred, b, SamplerConfig{});
        EXPECT_EQ(x.clicks, y.clicks);
        EXPECT_EQ(x.prev_prob, y.prev_prob);
    }
    EXPECT_THROW(sample_training_clicks(BinMask(8, 8), Tensor({3, 8, 8}), nullptr, a, SamplerConfig{}), ArgumentError);
}

TEST(Augment, DoubleFlipIsIdentity) {
    const auto scene = generate_scene(6, small_scenes());
    AugmentDraw flip;
    flip.hflip = true;
    flip.vflip = true;
    const auto twice = apply_augment(apply_augment(scene, flip), flip);
    EXPECT_EQ(twice.gt, scene.gt);
    for (std::size_t i = 0; i < scene.image.numel(); ++i) EXPECT_EQ(twice.image.data()[i], scene.image.data()[i]);
    const auto once = apply_augment(scene, flip);
    EXPECT_EQ(once.gt.at(0, 0), scene.gt.at(63, 95));
}

TEST(Augment, IdentityDrawKeepsScene) {
    const auto scene = generate_scene(7, small_scenes());
    const auto out = apply_augment(scene, AugmentDraw{});
    EXPECT_EQ(out.gt, scene.gt);
    for (std::size_t i = 0; i < scene.image.numel(); ++i) EXPECT_EQ(out.image.data()[i], scene.image.data()[i]);
    AugmentConfig off;
    off.enabled = false;
    std::mt19937_64 rng(75);
    EXPECT_EQ(augment(scene, rng, off).gt, scene.gt);
}

TEST(Augment, MaskAreaScalesWithZoom) {
    SceneConfig cfg = small_scenes();
    cfg.kind = ShapeKind::disk;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto scene = generate_scene(seed, cfg);
        const double r = scene.meta.params[2];
        for (double s : {0.75, 0.9, 1.1, 1.25}) {
            AugmentDraw d;
            d.scale = s;
            // Keep the scaled disk fully inside the window.
            const int sh = static_cast<int>(std::lround(s * 64)), sw = static_cast<int>(std::lround(s * 96));
            const double cy = scene.meta.params[0] * (sh - 1) / 63.0, cx = scene.meta.params[1] * (sw - 1) / 95.0;
            const double sr = r * s;
            const int lo_y = static_cast<int>(std::ceil(cy + sr + 1 - 64)), hi_y = static_cast<int>(std::floor(cy - sr - 1));
            const int lo_x = static_cast<int>(std::ceil(cx + sr + 1 - 96)), hi_x = static_cast<int>(std::floor(cx - sr - 1));
            if (lo_y > hi_y || lo_x > hi_x) continue;
            d.offset_y = std::clamp((lo_y + hi_y) / 2, std::min(0, sh - 64), std::max(0, sh - 64));
            d.offset_x = std::clamp((lo_x + hi_x) / 2, std::min(0, sw - 96), std::max(0, sw - 96));
            const auto out = apply_augment(scene, d);
            const double want = s * s * double(count_foreground(scene.gt));
            // Nearest-neighbour resampling moves at most a one-pixel band along the boundary.
            EXPECT_NEAR(double(count_foreground(out.gt)), want, 2.0 * std::numbers::pi * sr + 4.0)
                << "seed " << seed << " scale " << s;
        }
    }
}

TEST(Augment, DrawsStayInRange) {
    std::mt19937_64 rng(77);
    AugmentConfig cfg;
    int flips = 0;
    for (int t = 0; t < 2000; ++t) {
        const auto d = draw_augment(64, 96, rng, cfg);
        EXPECT_GE(d.scale, 0.75);
        EXPECT_LE(d.scale, 1.25);
        EXPECT_FALSE(d.vflip);
        flips += d.hflip;
        const int sh = static_cast<int>(std::lround(d.scale * 64));
        EXPECT_GE(d.offset_y, std::min(0, sh - 64));
        EXPECT_LE(d.offset_y, std::max(0, sh - 64));
    }
    EXPECT_NEAR(flips / 2000.0, 0.5, 0.05);
}

TEST(CropMask, FullFrameRegionIsIdentity) {
    std::mt19937_64 rng(78);
    const auto gt = test::random_mask(12, 16, rng, 0.4);
    EXPECT_EQ(crop_mask(gt, ZoomRegion{0, 0, 12, 16, 12, 16}), gt);
    const auto block = crop_mask(gt, ZoomRegion{2, 4, 6, 8, 6, 8});
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x) EXPECT_EQ(block.at(y, x), gt.at(2 + y, 4 + x)) << y << "," << x;
}

TEST(TrainCoarse, SmokeRunWritesFiniteLog) {
    test::TempDir dir("train_smoke");
    auto cfg = tiny_config();
    cfg.log_path = dir / "log.jsonl";
    const auto data = generate_split(4, 1, "train", small_scenes());
    const auto res = train_coarse(data, cfg);
    ASSERT_EQ(res.log.size(), 2u);
    for (const auto& s : res.log) {
        EXPECT_TRUE(std::isfinite(s.loss));
        EXPECT_TRUE(std::isfinite(s.grad_norm));
        EXPECT_EQ(s.lr, cfg.lr_coarse);
    }
    std::ifstream in(cfg.log_path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        for (const char* key : {"step", "epoch", "loss", "grad_norm", "lr"}) EXPECT_TRUE(j.contains(key)) << key;
        ++lines;
    }
    EXPECT_EQ(lines, 2);
    EXPECT_THROW(train_coarse({}, cfg), ArgumentError);
}

TEST(TrainCoarse, FixedSeedIsBitIdentical) {
    const auto data = generate_split(4, 2, "train", small_scenes());
    auto cfg = tiny_config();
    cfg.seed = 9;
    const auto a = train_coarse(data, cfg);
    const auto b = train_coarse(data, cfg);
    EXPECT_TRUE(same_bits(a.params, b.params));
    cfg.seed = 10;
    EXPECT_FALSE(same_bits(a.params, train_coarse(data, cfg).params));
}

TEST(TrainCoarse, ProbeLossDecreasesForTwentySteps) {
    // Adam at lr 1e-3 on one fixed batch of synthetic scenes.
    const auto data = generate_split(4, 3, "train", small_scenes());
    auto params = ModelParams::init(tiny_config().model);
    std::mt19937_64 rng(79);
    std::vector<ClickSet> clicks;
    for (const auto& s : data) clicks.push_back(sample_training_clicks(s.gt, s.image, nullptr, rng, SamplerConfig{}).clicks);
    auto weights = params.parameters();
    AdamState adam;
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 20; ++step) {
        zero_grads(weights);
        double loss = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            Tape tape;
            const auto x = encode_input(data[i].image, clicks[i], ProbMask(64, 96), params.config().click_radius);
            const auto l = nfl_loss(tape, forward(tape, x, clicks[i], params).prob, data[i].gt, 2.0);
            backward(l, tape);
            loss += l.item();
        }
        EXPECT_LT(loss, prev) << "step " << step;
        prev = loss;
        scale_grads(weights, 1.0 / double(data.size()));
        adam_step(weights, adam, AdamOptions{1e-3});
    }
}

TEST(TrainCoarse, NonFiniteLossAbortsWithDump) {
    test::TempDir dir("train_nan");
    auto data = generate_split(2, 4, "train", small_scenes());
    for (auto& s : data) s.image.data()[5] = std::numeric_limits<double>::quiet_NaN();
    auto cfg = tiny_config();
    cfg.log_path = dir / "log.jsonl";
    cfg.augment.enabled = false;
    try {
        train_coarse(data, cfg);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("train_0000"), std::string::npos) << e.what();
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "log.jsonl.nan.json"));
}

TEST(TrainFine, StartsFromCoarseAndLeavesItUntouched) {
    const auto data = generate_split(4, 5, "train", small_scenes());
    auto cfg = tiny_config();
    const auto coarse = train_coarse(data, cfg).params;
    const auto snapshot = coarse.clone();

    auto zero = cfg;
    zero.epochs_fine = 0;
    EXPECT_TRUE(same_bits(train_fine(coarse, data, zero).params, coarse));

    bool checked_first = false;
    const auto res = train_fine(coarse, data, cfg, [&](const StepLog& s, const ModelParams& p) {
        if (s.step == 0) {
            checked_first = true;
            EXPECT_FALSE(same_bits(p, coarse));
        }
        return true;
    });
    EXPECT_TRUE(checked_first);
    EXPECT_TRUE(same_bits(coarse, snapshot));
    EXPECT_EQ(res.params.config(), coarse.config());
    for (const auto& s : res.log) EXPECT_EQ(s.lr, cfg.lr_fine);
}

TEST(RunAblation, ReportsEveryCell) {
    test::TempDir dir("ablation");
    const auto train = generate_split(2, 6, "train", small_scenes());
    const auto eval = generate_split(2, 6, "eval", small_scenes());
    auto cfg = tiny_config();
    cfg.batch_size = 2;
    EvalConfig ec;
    ec.max_clicks = 3;
    AblationOptions opt;
    opt.grids = {AblationGrid::components, AblationGrid::iaf};
    opt.seeds = {0, 1};
    opt.work_dir = dir / "runs";
    const auto r = run_ablation(train, eval, cfg, ec, opt);
    ASSERT_EQ(r.cells.size(), (4u + 3u) * 2u);
    for (const auto& c : r.cells) {
        EXPECT_TRUE(std::isfinite(c.noc));
        EXPECT_GE(c.noc, 1.0);
        EXPECT_LE(c.noc, 3.0);
        EXPECT_GE(c.train_seconds, 0.0);
    }
    EXPECT_EQ(r.mean_noc().size(), 7u);
    EXPECT_NO_THROW(r.mean_noc("full"));
    EXPECT_THROW(r.mean_noc("nope"), ArgumentError);
    // Only two architectures per seed are trained: none and sgm_hsgm.
    EXPECT_TRUE(std::filesystem::exists(dir / "runs" / "none_s0.ckpt"));
    EXPECT_TRUE(std::filesystem::exists(dir / "runs" / "sgm_hsgm_s1.ckpt"));
    EXPECT_FALSE(std::filesystem::exists(dir / "runs" / "sgm_s0.ckpt"));
    write_ablation_csv(r, dir / "ablation.csv");
    std::ifstream in(dir / "ablation.csv");
    std::string line;
    int n = 0;
    while (std::getline(in, line)) ++n;
    EXPECT_EQ(n, 15);
    EXPECT_TRUE(std::filesystem::exists(dir / "ablation_summary.csv"));
}

TEST(RunAblation, VariantFilterKeepsOnlyNamedCells) {
    test::TempDir dir("ablation_filter");
    const auto train = generate_split(2, 6, "train", small_scenes());
    const auto eval = generate_split(2, 6, "eval", small_scenes());
    auto cfg = tiny_config();
    cfg.batch_size = 2;
    EvalConfig ec;
    ec.max_clicks = 3;
    AblationOptions opt;
    opt.grids = {AblationGrid::components, AblationGrid::fpm};
    opt.seeds = {0};
    opt.variants = {"baseline", "SGM"};
    opt.work_dir = dir / "runs";
    const auto r = run_ablation(train, eval, cfg, ec, opt);
    ASSERT_EQ(r.cells.size(), 2u);
    EXPECT_EQ(r.cells[0].variant, "baseline");
    EXPECT_EQ(r.cells[1].variant, "SGM");
    EXPECT_TRUE(std::filesystem::exists(dir / "runs" / "sgm_s0.ckpt"));
    EXPECT_FALSE(std::filesystem::exists(dir / "runs" / "sgm_hsgm_s0.ckpt"));
    opt.variants = {"SGM+nothing"};
    EXPECT_THROW(run_ablation(train, eval, cfg, ec, opt), ArgumentError);
}

} // namespace
} // namespace iseg
