#include <gtest/gtest.h>

#include <cmath>

#include "iseg/cascade.hpp"
#include "iseg/errors.hpp"
#include "test_support.hpp"

namespace iseg {
namespace {

ProbMask block(int h, int w, int r0, int r1, int c0, int c1, double value = 1.0) {
    ProbMask m(h, w);
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) m.at(r, c) = value;
    return m;
}

TEST(AdaptiveMargin, ClampedAndMonotone) {
    const CascadeConfig cfg;
    EXPECT_DOUBLE_EQ(adaptive_margin(0.0, cfg), 0.4);
    EXPECT_DOUBLE_EQ(adaptive_margin(0.5, cfg), 0.2);
    EXPECT_DOUBLE_EQ(adaptive_margin(0.9, cfg), 0.1);
    EXPECT_DOUBLE_EQ(adaptive_margin(1.0, cfg), 0.1);
    CascadeConfig wide = cfg;
    wide.margin_scale = 2.0;
    EXPECT_DOUBLE_EQ(adaptive_margin(0.0, wide), 0.8);
    double prev = adaptive_margin(0.0, cfg);
    for (int i = 1; i <= 1000; ++i) {
        const double m = adaptive_margin(i / 1000.0, cfg);
        EXPECT_LE(m, prev);
        prev = m;
    }
}

TEST(AdaptiveBox, GrowsTightBoxByMargin) {
    const CascadeConfig cfg;
    const auto region = adaptive_box(block(96, 144, 40, 49, 60, 79), cfg);
    ASSERT_TRUE(region);
    // s = 200/13824, m = 0.4 * (1 - s), grow = 20 m = 7.884...
    EXPECT_EQ(region->top, 32);
    EXPECT_EQ(region->left, 52);
    EXPECT_EQ(region->height, 57 - 32 + 1);
    EXPECT_EQ(region->width, 87 - 52 + 1);
    EXPECT_EQ(region->target_h, cfg.target_h);
    EXPECT_EQ(region->target_w, cfg.target_w);
}

TEST(AdaptiveBox, ThresholdIsInclusive) {
    const CascadeConfig cfg;
    EXPECT_TRUE(adaptive_box(block(20, 20, 5, 5, 5, 5, 0.5), cfg));
    EXPECT_FALSE(adaptive_box(block(20, 20, 5, 5, 5, 5, 0.4999), cfg));
}

TEST(AdaptiveBox, SinglePixelInCornerWidensToMinimum) {
    const auto region = adaptive_box(block(40, 60, 0, 0, 59, 59), CascadeConfig{});
    ASSERT_TRUE(region);
    EXPECT_EQ(region->height, ZoomRegion::kMinExtent);
    EXPECT_EQ(region->width, ZoomRegion::kMinExtent);
    EXPECT_EQ(region->top, 0);
    EXPECT_EQ(region->left + region->width, 60);
    EXPECT_TRUE(region->contains(0, 59));
}

TEST(AdaptiveBox, RandomMasksSatisfyInvariants) {
    std::mt19937_64 rng(41);
    const CascadeConfig cfg;
    std::uniform_int_distribution<int> dim(1, 60);
    for (int t = 0; t < 1000; ++t) {
        const int h = dim(rng), w = dim(rng);
        ProbMask m(h, w);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double density = u(rng) * 0.2;
        for (auto& v : m.data) v = u(rng) < density ? u(rng) * 0.5 + 0.5 : u(rng) * 0.49;
        const auto region = adaptive_box(m, cfg);
        bool any = false;
        for (double v : m.data) any = any || v >= cfg.threshold;
        ASSERT_EQ(region.has_value(), any);
        if (!region) continue;
        EXPECT_EQ(region->violation(h, w), "") << h << "x" << w;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                if (m.at(r, c) >= cfg.threshold) EXPECT_TRUE(region->contains(r, c));
    }
}

TEST(ZoomGeometry, CropRemapRoundTripOfSmoothField) {
    const int h = 96, w = 144;
    ProbMask field(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) field.at(r, c) = 0.5 + 0.5 * std::sin(c / 15.0) * std::cos(r / 11.0);
    const ZoomRegion regions[] = {{10, 20, 40, 60, 96, 144}, {0, 0, 96, 144, 96, 144}, {50, 100, 30, 44, 96, 144},
                                  {5, 7, 8, 8, 96, 144}};
    for (const auto& region : regions) {
        const auto crop = crop_plane(field, region);
        const auto back = remap_to_full(crop, region, h, w, ProbMask(h, w));
        double worst = 0.0;
        for (int r = region.top + 1; r < region.top + region.height - 1; ++r)
            for (int c = region.left + 1; c < region.left + region.width - 1; ++c)
                worst = std::max(worst, std::abs(back.at(r, c) - field.at(r, c)));
        EXPECT_LT(worst, 0.02);
        EXPECT_EQ(back.at(0, 0), region.contains(0, 0) ? back.at(0, 0) : 0.0);
    }
}

TEST(Remap, KeepsBackgroundOutsideRegion) {
    const ZoomRegion region{4, 6, 10, 12, 16, 16};
    const ProbMask bg = block(30, 30, 0, 29, 0, 29, 0.25);
    const auto out = remap_to_full(ProbMask(16, 16, 0.75), region, 30, 30, bg);
    for (int r = 0; r < 30; ++r)
        for (int c = 0; c < 30; ++c) EXPECT_EQ(out.at(r, c), region.contains(r, c) ? 0.75 : 0.25);
    EXPECT_THROW(remap_to_full(ProbMask(16, 16), {25, 0, 10, 10, 16, 16}, 30, 30, bg), ContractError);
    EXPECT_THROW(remap_to_full(ProbMask(8, 16), region, 30, 30, bg), DimensionError);
}

// Stub predictors: the coarse one paints a disk of radius 6 around positive clicks,
// the fine one returns 0.9 everywhere.
struct Stubs {
    int coarse_calls = 0;
    int fine_calls = 0;
    Predictor coarse = [this](const Tensor& img, const ProbMask&, const ClickSet& clicks) {
        ++coarse_calls;
        ProbMask m(static_cast<int>(img.dim(1)), static_cast<int>(img.dim(2)));
        for (const auto& k : clicks)
            for (int r = 0; r < m.height; ++r)
                for (int c = 0; c < m.width; ++c)
                    if (k.polarity == Polarity::positive && (r - k.row) * (r - k.row) + (c - k.col) * (c - k.col) <= 36)
                        m.at(r, c) = 1.0;
        return m;
    };
    Predictor fine = [this](const Tensor& img, const ProbMask&, const ClickSet&) {
        ++fine_calls;
        return ProbMask(static_cast<int>(img.dim(1)), static_cast<int>(img.dim(2)), 0.9);
    };
};

TEST(InteractiveStep, CoarseToFineZoomsAndRemaps) {
    Stubs s;
    auto session = SessionState::start(Tensor::full({3, 48, 64}, 0.5));
    const CascadeConfig cfg{0.5, 0.4, 0.1, 0.8, 32, 48, Strategy::coarse_to_fine};
    const auto res = interactive_step(session, {20, 30, Polarity::positive, 99}, s.coarse, s.fine, cfg);
    EXPECT_EQ(s.coarse_calls, 1);
    EXPECT_EQ(s.fine_calls, 1);
    ASSERT_TRUE(res.region);
    EXPECT_EQ(res.region, adaptive_box(res.coarse, cfg));
    for (int r = 0; r < 48; ++r)
        for (int c = 0; c < 64; ++c)
            EXPECT_DOUBLE_EQ(res.prob.at(r, c), res.region->contains(r, c) ? 0.9 : res.coarse.at(r, c));
    EXPECT_EQ(session.step, 1);
    EXPECT_EQ(session.clicks.back().step, 1);
    EXPECT_EQ(session.prev_prob, res.prob);
    EXPECT_EQ(session.last_region, res.region);
}

TEST(InteractiveStep, StrategiesPickPredictors) {
    const CascadeConfig base{0.5, 0.4, 0.1, 0.8, 32, 48, Strategy::coarse_to_fine};
    const std::pair<Strategy, std::pair<int, int>> cases[] = {{Strategy::coarse_to_fine, {1, 1}},
                                                              {Strategy::coarse_to_coarse, {2, 0}},
                                                              {Strategy::fine_to_fine, {0, 2}},
                                                              {Strategy::coarse_only, {1, 0}}};
    for (const auto& [strategy, calls] : cases) {
        Stubs s;
        auto cfg = base;
        cfg.strategy = strategy;
        auto session = SessionState::start(Tensor::full({3, 48, 64}, 0.5));
        // fine_to_fine runs the constant predictor first, which still yields a box.
        const auto res = interactive_step(session, {20, 30, Polarity::positive, 1}, s.coarse, s.fine, cfg);
        EXPECT_EQ(s.coarse_calls, calls.first) << to_string(strategy);
        EXPECT_EQ(s.fine_calls, calls.second) << to_string(strategy);
        EXPECT_EQ(res.region.has_value(), strategy != Strategy::coarse_only);
    }
}

TEST(InteractiveStep, EmptyForegroundFallsBackToCoarse) {
    Stubs s;
    auto session = SessionState::start(Tensor::full({3, 32, 32}, 0.5));
    const CascadeConfig cfg{0.5, 0.4, 0.1, 0.8, 32, 32, Strategy::coarse_to_fine};
    const auto res = interactive_step(session, {5, 5, Polarity::negative, 1}, s.coarse, s.fine, cfg);
    EXPECT_FALSE(res.region);
    EXPECT_EQ(s.fine_calls, 0);
    EXPECT_EQ(res.prob, res.coarse);
    EXPECT_EQ(count_foreground(binarize(res.prob)), 0u);
}

TEST(InteractiveStep, RejectsBadClicksWithoutMutation) {
    Stubs s;
    auto session = SessionState::start(Tensor::full({3, 32, 32}, 0.5));
    const CascadeConfig cfg{0.5, 0.4, 0.1, 0.8, 32, 32, Strategy::coarse_to_fine};
    interactive_step(session, {5, 5, Polarity::positive, 1}, s.coarse, s.fine, cfg);
    const auto before = session.snapshot();
    EXPECT_THROW(interactive_step(session, {5, 5, Polarity::negative, 2}, s.coarse, s.fine, cfg), DuplicateClickError);
    EXPECT_THROW(interactive_step(session, {32, 0, Polarity::positive, 2}, s.coarse, s.fine, cfg), OutOfBoundsError);
    EXPECT_THROW(interactive_step(session, {0, -1, Polarity::positive, 2}, s.coarse, s.fine, cfg), OutOfBoundsError);
    EXPECT_EQ(session, before);
}

TEST(CascadeConfig, Validation) {
    CascadeConfig c;
    EXPECT_NO_THROW(c.validate());
    c.target_h = 30;
    EXPECT_THROW(c.validate(), ArgumentError);
    c = {};
    c.margin_min = 0.9;
    EXPECT_THROW(c.validate(), ArgumentError);
    c = {};
    c.threshold = 1.0;
    EXPECT_THROW(c.validate(), ArgumentError);
    EXPECT_EQ(strategy_from_string("fine_to_fine"), Strategy::fine_to_fine);
    EXPECT_THROW(strategy_from_string("zoom"), ArgumentError);
}

TEST(CascadeCheckpoint, RoundTripBitExact) {
    test::TempDir dir("cascade");
    ModelConfig mc;
    mc.c_low = 4;
    mc.c_high = 6;
    CascadeModel m{ModelParams::init(mc), std::nullopt};
    mc.seed = 9;
    m.fine = ModelParams::init(mc);
    save_cascade(dir / "m.ckpt", m);
    const auto back = load_cascade(dir / "m.ckpt");
    EXPECT_EQ(back.coarse.fingerprint(), m.coarse.fingerprint());
    ASSERT_TRUE(back.fine);
    EXPECT_EQ(back.fine->fingerprint(), m.fine->fingerprint());
    EXPECT_EQ(back.coarse.config(), m.coarse.config());

    CascadeModel coarse_only{m.coarse, std::nullopt};
    save_cascade(dir / "c.ckpt", coarse_only);
    EXPECT_FALSE(load_cascade(dir / "c.ckpt").fine);
    EXPECT_THROW(load_cascade(dir / "missing.ckpt"), IoError);
}

} // namespace
} // namespace iseg
