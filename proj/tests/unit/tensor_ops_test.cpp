#include <gtest/gtest.h>

#include <cmath>

#include "iseg/errors.hpp"
#include "iseg/gradcheck.hpp"
#include "iseg/ops.hpp"
#include "test_support.hpp"

namespace iseg {
namespace {

using test::random_tensor;

// Direct loop convolution, independent of the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& k, const Tensor& b, ops::Conv2dOptions o) {
    const long cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = k.dim(0), ks = k.dim(2);
    const long span = o.dilation * (ks - 1) + 1;
    const long oh = (h + 2 * o.pad - span) / o.stride + 1, ow = (w + 2 * o.pad - span) / o.stride + 1;
    Tensor y({static_cast<std::size_t>(cout), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    for (long co = 0; co < cout; ++co)
        for (long oy = 0; oy < oh; ++oy)
            for (long ox = 0; ox < ow; ++ox) {
                double acc = b.defined() ? b.data()[co] : 0.0;
                for (long ci = 0; ci < cin; ++ci)
                    for (long i = 0; i < ks; ++i)
                        for (long j = 0; j < ks; ++j) {
                            const long iy = oy * o.stride - o.pad + i * o.dilation;
                            const long ix = ox * o.stride - o.pad + j * o.dilation;
                            if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
                            acc += k.data()[((co * cin + ci) * ks + i) * ks + j] * x.at(ci, iy, ix);
                        }
                y.at(co, oy, ox) = acc;
            }
    return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

TEST(Conv2d, MatchesLoopOracle) {
    std::mt19937_64 rng(1);
    const ops::Conv2dOptions cases[] = {{1, 1, 1}, {2, 1, 1}, {1, 2, 2}, {1, 4, 4}, {2, 1, 0}, {1, 1, 0}};
    for (const auto& o : cases) {
        for (std::size_t ks : {1u, 3u}) {
            const auto x = random_tensor({3, 9, 11}, rng);
            const auto k = random_tensor({4, 3, ks, ks}, rng);
            const auto b = random_tensor({4}, rng);
            Tape tape(false);
            const auto y = ops::conv2d(tape, x, k, b, o);
            EXPECT_LT(max_abs_diff(y, naive_conv(x, k, b, o)), 1e-12)
                << "stride " << o.stride << " dilation " << o.dilation << " k " << ks;
        }
    }
}

TEST(Conv2d, RejectsChannelMismatch) {
    Tape tape;
    EXPECT_THROW(ops::conv2d(tape, Tensor({2, 5, 5}), Tensor({1, 3, 3, 3}), Tensor(), {}), DimensionError);
    EXPECT_THROW(ops::conv2d(tape, Tensor({3, 5, 5}), Tensor({1, 3, 2, 2}), Tensor(), {}), DimensionError);
}

TEST(BilinearUpsample, CornerAlignedFormula) {
    std::mt19937_64 rng(2);
    const auto x = random_tensor({2, 4, 5}, rng);
    Tape tape(false);
    const auto y = ops::bilinear_upsample(tape, x, 2);
    ASSERT_EQ(y.shape(), (Shape{2, 8, 10}));
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 10; ++j) {
                const double sy = i * 3.0 / 7.0, sx = j * 4.0 / 9.0;
                const std::size_t y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
                const std::size_t y1 = std::min<std::size_t>(y0 + 1, 3), x1 = std::min<std::size_t>(x0 + 1, 4);
                const double fy = sy - y0, fx = sx - x0;
                const double want = (1 - fy) * ((1 - fx) * x.at(c, y0, x0) + fx * x.at(c, y0, x1)) +
                                    fy * ((1 - fx) * x.at(c, y1, x0) + fx * x.at(c, y1, x1));
                EXPECT_NEAR(y.at(c, i, j), want, 1e-12);
            }
    EXPECT_EQ(y.at(1, 0, 0), x.at(1, 0, 0));
    EXPECT_EQ(y.at(1, 7, 9), x.at(1, 3, 4));
}

TEST(BilinearUpsample, ReproducesLinearRamp) {
    Tensor x({1, 3, 3});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) x.at(0, i, j) = 2.0 * i - 0.5 * j;
    Tape tape(false);
    const auto y = ops::bilinear_upsample(tape, x, 3);
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR(y.at(0, i, j), 2.0 * (i / 4.0) - 0.5 * (j / 4.0), 1e-12);
}

TEST(Matmul, MatchesLoop) {
    std::mt19937_64 rng(3);
    const auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
    Tape tape(false);
    const auto c = ops::matmul(tape, a, b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 4; ++k) acc += a.data()[i * 4 + k] * b.data()[k * 5 + j];
            EXPECT_NEAR(c.data()[i * 5 + j], acc, 1e-14);
        }
    EXPECT_THROW(ops::matmul(tape, a, a), DimensionError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    std::mt19937_64 rng(4);
    auto x = random_tensor({6, 5}, rng, -30.0, 30.0);
    Tape tape(false);
    const auto p = ops::softmax_rows(tape, x);
    auto shifted = x.clone();
    for (std::size_t j = 0; j < 5; ++j) shifted.data()[2 * 5 + j] += 1000.0;
    const auto q = ops::softmax_rows(tape, shifted);
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
            s += p.data()[r * 5 + j];
            EXPECT_NEAR(p.data()[r * 5 + j], q.data()[r * 5 + j], 1e-12);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Concat, StacksChannels) {
    std::mt19937_64 rng(5);
    const auto a = random_tensor({1, 2, 3}, rng), b = random_tensor({2, 2, 3}, rng);
    Tape tape(false);
    const auto c = ops::concat_channels(tape, {a, b});
    ASSERT_EQ(c.shape(), (Shape{3, 2, 3}));
    EXPECT_EQ(c.at(0, 1, 2), a.at(0, 1, 2));
    EXPECT_EQ(c.at(2, 0, 1), b.at(1, 0, 1));
    EXPECT_THROW(ops::concat_channels(tape, {a, Tensor({1, 3, 3})}), DimensionError);
}

TEST(Backward, AccumulatesOverFanOut) {
    Tensor x({3}, {1.0, -2.0, 0.5});
    x.set_trainable(true);
    Tape tape;
    // y = sum(x * x + 3x): dy/dx = 2x + 3
    const auto y = ops::sum(tape, ops::add(tape, ops::mul(tape, x, x), ops::scale(tape, x, 3.0)));
    backward(y, tape);
    EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -1.0);
    EXPECT_DOUBLE_EQ(x.grad()[2], 4.0);
}

TEST(Backward, NonTrainableLeavesUntouched) {
    Tensor x({2}, {1.0, 2.0}), c({2}, {3.0, 4.0});
    x.set_trainable(true);
    Tape tape;
    backward(ops::sum(tape, ops::mul(tape, x, c)), tape);
    EXPECT_FALSE(c.has_grad());
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Tape, DisabledRecordsNothing) {
    Tensor x({2}, {1.0, 2.0});
    x.set_trainable(true);
    Tape tape(false);
    const auto y = ops::sigmoid(tape, ops::relu(tape, x));
    EXPECT_EQ(tape.size(), 0u);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Tensor, HandlesAliasAndCloneCopies) {
    Tensor a({2}, {1.0, 2.0});
    Tensor alias = a;
    Tensor deep = a.clone();
    a.data()[0] = 7.0;
    EXPECT_EQ(alias.data()[0], 7.0);
    EXPECT_EQ(deep.data()[0], 1.0);
    EXPECT_THROW(Tensor({2, 2}, {1.0}), DimensionError);
}

// A few instances per op keep the unit suite quick; the acceptance binary runs the
// full 20-instance suite.
class GradCheck : public ::testing::TestWithParam<std::string> {};

TEST_P(GradCheck, ReverseModeMatchesFiniteDifferences) {
    GradCheckOptions opt;
    opt.instances = 3;
    opt.seed = 11;
    const auto results = run_gradcheck({GetParam()}, opt);
    ASSERT_EQ(results.size(), 1u);
    EXPECT_TRUE(results[0].passed) << GetParam() << " max rel error " << results[0].max_rel_error;
    EXPECT_GT(results[0].coords_checked, 0);
    EXPECT_LT(results[0].max_rel_error, opt.tolerance);
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradCheck, ::testing::ValuesIn(gradcheck_op_names()),
                         [](const auto& info) { return info.param; });

TEST(GradCheckSuite, AllExpandsToEveryOp) {
    GradCheckOptions opt;
    opt.instances = 1;
    EXPECT_EQ(run_gradcheck({"all"}, opt).size(), gradcheck_op_names().size());
    EXPECT_THROW(run_gradcheck({"no_such_op"}, opt), ArgumentError);
}

} // namespace
} // namespace iseg
