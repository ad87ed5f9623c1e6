#include <gtest/gtest.h>

#include <set>

#include <nlohmann/json.hpp>

#include "iseg/errors.hpp"
#include "iseg/model.hpp"
#include "iseg/ops.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace iseg {
namespace {

ModelConfig small_config(FpmMode fpm, std::uint64_t seed = 0) {
    ModelConfig c;
    c.c_low = 4;
    c.c_high = 6;
    c.fpm = fpm;
    c.seed = seed;
    return c;
}

const FpmMode kModes[] = {FpmMode::none, FpmMode::sgm, FpmMode::sgm_fuse, FpmMode::sgm_fuse_sgm, FpmMode::sgm_hsgm};

TEST(ModelParams, InitIsSeedDeterministic) {
    const auto a = ModelParams::init(small_config(FpmMode::sgm_hsgm, 3));
    const auto b = ModelParams::init(small_config(FpmMode::sgm_hsgm, 3));
    const auto c = ModelParams::init(small_config(FpmMode::sgm_hsgm, 4));
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
    EXPECT_NE(a.fingerprint(), c.fingerprint());
    for (const auto& [name, t] : a.tensors()) {
        if (name.size() > 2 && name.substr(name.size() - 2) == ".b") {
            for (double v : t.data()) EXPECT_EQ(v, 0.0) << name;
        }
    }
}

TEST(ModelParams, LayoutFollowsFpmMode) {
    const auto none = ModelParams::init(small_config(FpmMode::none));
    EXPECT_FALSE(none.has("sgm.theta"));
    EXPECT_TRUE(none.has("gproj.w"));
    const auto sgm = ModelParams::init(small_config(FpmMode::sgm));
    EXPECT_TRUE(sgm.has("sgm.theta"));
    EXPECT_FALSE(sgm.has("hsgm.sigma_w"));
    const auto fuse = ModelParams::init(small_config(FpmMode::sgm_fuse));
    EXPECT_TRUE(fuse.has("hsgm.sigma_w"));
    EXPECT_FALSE(fuse.has("hsgm.theta_g"));
    const auto full = ModelParams::init(small_config(FpmMode::sgm_hsgm));
    EXPECT_TRUE(full.has("hsgm.theta_g"));
    EXPECT_EQ(full.get("hsgm.theta_g").shape(), (Shape{6, 6}));
    EXPECT_EQ(full.get("hsgm.sigma_w").shape(), (Shape{4, 10, 1, 1}));
    EXPECT_GT(full.parameter_count(), none.parameter_count());
    auto no_pol = small_config(FpmMode::sgm_hsgm);
    no_pol.polarity_embedding = false;
    EXPECT_FALSE(ModelParams::init(no_pol).has("sgm.polarity"));
    EXPECT_THROW(none.get("sgm.theta"), ContractError);
}

TEST(Forward, ShapesAndRangeForEveryMode) {
    std::mt19937_64 rng(51);
    const auto image = test::random_tensor({3, 16, 24}, rng, 0.0, 1.0);
    const ClickSet clicks{{4, 5, Polarity::positive, 1}, {10, 20, Polarity::negative, 2}, {5, 5, Polarity::positive, 3}};
    for (auto mode : kModes) {
        const auto p = ModelParams::init(small_config(mode, 1));
        Tape tape(false);
        const auto x = encode_input(image, clicks, ProbMask(16, 24, 0.3), p.config().click_radius);
        const auto out = forward(tape, x, clicks, p);
        ASSERT_EQ(out.prob.shape(), (Shape{1, 16, 24})) << to_string(mode);
        for (double v : out.prob.data()) {
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
        }
        EXPECT_EQ(to_prob_mask(out.prob), predict(p, image, ProbMask(16, 24, 0.3), clicks));
    }
}

TEST(Forward, ClicksChangeTheOutput) {
    std::mt19937_64 rng(52);
    const auto image = test::random_tensor({3, 16, 16}, rng, 0.0, 1.0);
    const auto p = ModelParams::init(small_config(FpmMode::sgm_hsgm, 2));
    const auto a = predict(p, image, ProbMask(16, 16), {});
    const auto b = predict(p, image, ProbMask(16, 16), {{8, 8, Polarity::positive, 1}});
    EXPECT_NE(a, b);
}

TEST(Forward, RejectsBadInputs) {
    const auto p = ModelParams::init(small_config(FpmMode::sgm));
    EXPECT_THROW(predict(p, Tensor({3, 18, 16}), ProbMask(18, 16), {}), ArgumentError);
    EXPECT_THROW(predict(p, Tensor({1, 16, 16}), ProbMask(16, 16), {}), DimensionError);
    EXPECT_THROW(predict(p, Tensor({3, 16, 16}), ProbMask(16, 12), {}), DimensionError);
    EXPECT_THROW(predict(p, Tensor({3, 16, 16}), ProbMask(16, 16), {{16, 0, Polarity::positive, 1}}), OutOfBoundsError);
}

TEST(Forward, GradientReachesEveryParameter) {
    std::mt19937_64 rng(53);
    const auto image = test::random_tensor({3, 16, 16}, rng, 0.0, 1.0);
    BinMask gt(16, 16);
    for (int r = 4; r < 12; ++r)
        for (int c = 3; c < 10; ++c) gt.at(r, c) = 1;
    const ClickSet clicks{{7, 6, Polarity::positive, 1}, {1, 14, Polarity::negative, 2}};
    for (auto mode : kModes) {
        auto p = ModelParams::init(small_config(mode, 5));
        // Small positive biases keep the relus open so no gradient is cut structurally.
        for (const auto& [name, t] : p.tensors()) {
            Tensor alias = t;
            if (name.size() > 2 && name.substr(name.size() - 2) == ".b") std::fill(alias.data().begin(), alias.data().end(), 0.05);
        }
        Tape tape;
        const auto out = forward(tape, encode_input(image, clicks, ProbMask(16, 16), 2), clicks, p);
        backward(nfl_loss(tape, out.prob, gt, 2.0), tape);
        for (const auto& [name, t] : p.tensors()) {
            ASSERT_TRUE(t.has_grad()) << to_string(mode) << " " << name;
            double norm = 0.0;
            for (double g : t.grad()) norm += g * g;
            EXPECT_GT(norm, 0.0) << to_string(mode) << " " << name;
        }
    }
}

TEST(Nfl, GammaZeroIsMeanBce) {
    std::mt19937_64 rng(54);
    for (int t = 0; t < 20; ++t) {
        const auto prob = test::random_tensor({1, 6, 7}, rng, 0.0, 1.0);
        const auto gt = test::random_mask(6, 7, rng, 0.4);
        Tape tape(false);
        const double got = nfl_loss(tape, prob, gt, 0.0).item();
        const std::vector<double> p(prob.data().begin(), prob.data().end());
        EXPECT_NEAR(got, oracle::mean_bce(p, gt, kNflClamp), 1e-12);
    }
}

TEST(Nfl, GammaTwoMatchesScalarLoop) {
    std::mt19937_64 rng(55);
    for (int t = 0; t < 20; ++t) {
        auto prob = test::random_tensor({1, 5, 9}, rng, 0.0, 1.0);
        prob.data()[0] = 0.0; // exercise the clamp
        prob.data()[1] = 1.0;
        const auto gt = test::random_mask(5, 9, rng, 0.5);
        Tape tape(false);
        const std::vector<double> p(prob.data().begin(), prob.data().end());
        EXPECT_NEAR(nfl_loss(tape, prob, gt, 2.0).item(), oracle::nfl(p, gt, 2.0, kNflClamp), 1e-12);
    }
}

TEST(Nfl, NormalizerFloorOnPerfectPrediction) {
    BinMask gt(2, 2);
    gt.at(0, 0) = 1;
    Tensor prob({1, 2, 2}, {1.0, 0.0, 0.0, 0.0});
    Tape tape(false);
    const double got = nfl_loss(tape, prob, gt, 2.0).item();
    const std::vector<double> p(prob.data().begin(), prob.data().end());
    EXPECT_NEAR(got, oracle::nfl(p, gt, 2.0, kNflClamp), 1e-18);
    EXPECT_LT(got, 1e-6);
    EXPECT_THROW(nfl_loss(tape, Tensor({1, 3, 3}), gt, 2.0), DimensionError);
    EXPECT_THROW(nfl_loss(tape, prob, gt, -1.0), ArgumentError);
}

TEST(ModelCheckpoint, RoundTripBitExact) {
    test::TempDir dir("model");
    for (auto mode : kModes) {
        const auto p = ModelParams::init(small_config(mode, 8));
        const auto path = dir / (std::string(to_string(mode)) + ".ckpt");
        save_model(path, p);
        const auto q = load_model(path);
        EXPECT_EQ(q.config(), p.config());
        ASSERT_EQ(q.tensors().size(), p.tensors().size());
        for (std::size_t i = 0; i < p.tensors().size(); ++i) {
            EXPECT_EQ(q.tensors()[i].first, p.tensors()[i].first);
            const auto a = p.tensors()[i].second.data(), b = q.tensors()[i].second.data();
            EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
        }
    }
}

TEST(ModelCheckpoint, ArchitectureMismatchIsFormatError) {
    const auto p = ModelParams::init(small_config(FpmMode::sgm));
    auto tensors = p.tensors();
    EXPECT_THROW(ModelParams::from_tensors(small_config(FpmMode::sgm_hsgm), tensors), FormatError);
    auto wider = small_config(FpmMode::sgm);
    wider.c_high = 8;
    EXPECT_THROW(ModelParams::from_tensors(wider, tensors), FormatError);
    tensors.emplace_back("extra", Tensor({1}));
    EXPECT_THROW(ModelParams::from_tensors(small_config(FpmMode::sgm), tensors), FormatError);
    test::TempDir dir("model_missing");
    EXPECT_THROW(load_model(dir / "none.ckpt"), IoError);
}

TEST(ModelConfig, JsonRoundTrip) {
    auto c = small_config(FpmMode::sgm_fuse_sgm, 77);
    c.polarity_embedding = false;
    EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
    EXPECT_THROW(model_config_from_json(nlohmann::json{{"c_low", 3}}), FormatError);
    EXPECT_THROW(fpm_mode_from_string("hsgm_only"), ArgumentError);
}

} // namespace
} // namespace iseg
