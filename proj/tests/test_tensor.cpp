#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dctnet/ops.hpp"
#include "harness.hpp"
#include "oracles.hpp"

using namespace dctnet;

namespace {

std::mt19937_64 rng_for(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace

TEST(Tensor, ShapeAndStorage) {
    Tensor<double> t(Shape{2, 3, 4, 5}, 1.5);
    EXPECT_EQ(t.numel(), 120u);
    EXPECT_EQ(t(1, 2, 3, 4), 1.5);
    EXPECT_THROW(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3}), shape_error);
    EXPECT_FALSE(t.has_grad());
    EXPECT_THROW((void)t.item(), shape_error);
}

TEST(Ewise, AddZeroIsIdentity) {
    auto rng = rng_for(1);
    const auto x = oracle::random(Shape{2, 3, 4, 4}, rng);
    const auto y = add(x, Tensor<double>::zeros(x.shape()));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Ewise, ScaleBroadcastOnesIsIdentity) {
    auto rng = rng_for(2);
    const auto x = oracle::random(Shape{2, 3, 4, 4}, rng);
    const auto y = scale_broadcast(x, Tensor<double>::ones(Shape{1, 1, 4, 4}));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Ewise, ShapeMismatchRejected) {
    const Tensor<double> a(Shape{1, 2, 3, 3}), b(Shape{1, 2, 3, 4});
    EXPECT_THROW(add(a, b), shape_error);
    EXPECT_THROW(mul(a, b), shape_error);
    EXPECT_THROW(scale_broadcast(a, Tensor<double>(Shape{1, 2, 3, 3})), shape_error);
    EXPECT_THROW(ewise(EwiseKind::add, a, Tensor<double>(Shape{1, 1, 3, 3})), shape_error);
}

TEST(Ewise, MulGradientMatchesFiniteDifferences) {
    auto rng = rng_for(3);
    auto a = oracle::random(Shape{2, 2, 3, 3}, rng), b = oracle::random(Shape{2, 2, 3, 3}, rng);
    EXPECT_LT(harness::grad_error({a, b}, [&] { return mul(a, b); }), 1e-6);
    // d(a*b)/da = b elementwise.
    Tape<double> tape;
    {
        Tape<double>::Scope s(tape);
        a.zero_grad();
        tape.backward(sum(mul(a, b)));
    }
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_DOUBLE_EQ(a.grad()[i], b[i]);
}

TEST(Ewise, AddSubScaleGradients) {
    auto rng = rng_for(4);
    auto a = oracle::random(Shape{1, 2, 3, 3}, rng), b = oracle::random(Shape{1, 2, 3, 3}, rng);
    EXPECT_LT(harness::grad_error({a, b}, [&] { return add(a, b); }), 1e-6);
    EXPECT_LT(harness::grad_error({a, b}, [&] { return sub(a, b); }), 1e-6);
    EXPECT_LT(harness::grad_error({a}, [&] { return scale(a, -2.5); }), 1e-6);
}

TEST(Ewise, BroadcastAdjointSumsOverBatchAndChannel) {
    auto rng = rng_for(5);
    auto x = oracle::random(Shape{3, 2, 4, 4}, rng);
    auto m = oracle::random(Shape{1, 1, 4, 4}, rng);
    EXPECT_LT(harness::grad_error({x, m}, [&] { return scale_broadcast(x, m); }), 1e-6);

    // Materialize the broadcast: the full-shape multiplier's gradient summed over (B,C)
    // equals the broadcast parameter's gradient.
    Tensor<double> full(x.shape());
    for (std::size_t p = 0; p < 6; ++p)
        for (std::size_t k = 0; k < 16; ++k) full[p * 16 + k] = m[k];
    full.set_requires_grad(true);
    m.set_requires_grad(true);
    m.zero_grad();
    const auto w = oracle::probe(x.shape());
    Tape<double> t1, t2;
    {
        Tape<double>::Scope s(t1);
        t1.backward(sum(mul(scale_broadcast(x, m), w)));
    }
    {
        Tape<double>::Scope s(t2);
        t2.backward(sum(mul(mul(x, full), w)));
    }
    for (std::size_t k = 0; k < 16; ++k) {
        double acc = 0;
        for (std::size_t p = 0; p < 6; ++p) acc += full.grad()[p * 16 + k];
        EXPECT_NEAR(m.grad()[k], acc, 1e-12);
    }
}

TEST(Conv1x1, IdentityAndRowSum) {
    auto rng = rng_for(6);
    const auto x = oracle::random(Shape{2, 3, 4, 4}, rng);
    Tensor<double> I(Shape{3, 3, 1, 1});
    for (std::size_t i = 0; i < 3; ++i) I[i * 3 + i] = 1;
    const auto y = conv1x1(x, I);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);

    const auto ones = Tensor<double>::ones(Shape{1, 2, 3, 3});
    const auto z = conv1x1(ones, Tensor<double>(Shape{1, 2, 1, 1}, std::vector<double>{1, 1}));
    EXPECT_EQ(z.shape(), (Shape{1, 1, 3, 3}));
    for (double v : z.data()) EXPECT_EQ(v, 2.0);
}

TEST(Conv1x1, ChannelMismatchRejected) {
    EXPECT_THROW(conv1x1(Tensor<double>(Shape{1, 3, 2, 2}), Tensor<double>(Shape{4, 2, 1, 1})), shape_error);
}

TEST(Conv1x1, GradientsWithAndWithoutBias) {
    auto rng = rng_for(7);
    auto x = oracle::random(Shape{2, 3, 3, 3}, rng);
    auto H = oracle::random(Shape{4, 3, 1, 1}, rng);
    auto bias = oracle::random(Shape{1, 4, 1, 1}, rng);
    EXPECT_LT(harness::grad_error({x, H}, [&] { return conv1x1(x, H); }), 1e-6);
    EXPECT_LT(harness::grad_error({x, H, bias}, [&] { return conv1x1(x, H, std::optional<Tensor<double>>(bias)); }), 1e-6);
}

TEST(Conv3x3, CenteredDeltaIsIdentity) {
    auto rng = rng_for(8);
    const auto x = oracle::random(Shape{1, 1, 5, 5}, rng);
    Tensor<double> k(Shape{1, 1, 3, 3});
    k(0, 0, 1, 1) = 1;
    const auto y = conv3x3(x, k);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
    const auto z = conv3x3(x, Tensor<double>(Shape{1, 1, 3, 3}));
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv3x3, MatchesLoopOracle) {
    auto rng = rng_for(9);
    const auto x = oracle::random(Shape{1, 1, 5, 5}, rng);
    const auto k = oracle::random(Shape{1, 1, 3, 3}, rng);
    const auto y = conv3x3(x, k);
    const auto ref = oracle::conv(x, k, 1);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-14);
}

TEST(Conv3x3, MultiChannelStridedMatchesLoopOracle) {
    auto rng = rng_for(10);
    for (std::size_t n : {5u, 6u, 8u}) {
        for (std::size_t stride : {1u, 2u}) {
            const auto x = oracle::random(Shape{2, 3, n, n}, rng);
            const auto k = oracle::random(Shape{4, 3, 3, 3}, rng);
            const auto y = conv3x3(x, k, stride);
            const auto ref = oracle::conv(x, k, stride);
            ASSERT_EQ(y.shape(), ref.shape());
            EXPECT_EQ(y.shape().h, (n + stride - 1) / stride);
            for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
        }
    }
}

TEST(Conv2d, SevenBySevenStrideTwoMatchesLoopOracle) {
    auto rng = rng_for(11);
    const auto x = oracle::random(Shape{1, 3, 12, 12}, rng);
    const auto k = oracle::random(Shape{2, 3, 7, 7}, rng);
    const auto y = conv2d(x, k, 2);
    const auto ref = oracle::conv(x, k, 2);
    ASSERT_EQ(y.shape(), (Shape{1, 2, 6, 6}));
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv3x3, Gradients) {
    auto rng = rng_for(12);
    auto x = oracle::random(Shape{2, 2, 5, 5}, rng);
    auto k = oracle::random(Shape{3, 2, 3, 3}, rng);
    EXPECT_LT(harness::grad_error({x, k}, [&] { return conv3x3(x, k, 1); }), 1e-6);
    EXPECT_LT(harness::grad_error({x, k}, [&] { return conv3x3(x, k, 2); }), 1e-6);
}

TEST(Conv3x3, ChannelMismatchRejected) {
    EXPECT_THROW(conv3x3(Tensor<double>(Shape{1, 2, 4, 4}), Tensor<double>(Shape{1, 3, 3, 3})), shape_error);
}

TEST(BatchNorm, NormalizedInputPassesThrough) {
    // Per-channel zero mean, unit (biased) variance.
    Tensor<double> x(Shape{2, 1, 2, 2}, std::vector<double>{1, -1, 1, -1, -1, 1, -1, 1});
    BatchNormState<double> st(1);
    const auto y = batch_norm(x, Tensor<double>::ones(Shape{1, 1, 1, 1}), Tensor<double>::zeros(Shape{1, 1, 1, 1}), st,
                              Mode::train);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], x[i], 1e-4);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
    auto rng = rng_for(13);
    const auto x = oracle::random(Shape{2, 3, 4, 4}, rng);
    BatchNormState<double> st(3);
    const auto y = batch_norm(x, Tensor<double>::zeros(Shape{1, 3, 1, 1}), Tensor<double>::full(Shape{1, 3, 1, 1}, 5.0),
                              st, Mode::train);
    for (double v : y.data()) EXPECT_EQ(v, 5.0);
}

TEST(BatchNorm, EvalBeforeTrainingUsesInitialStats) {
    auto rng = rng_for(14);
    const auto x = oracle::random(Shape{2, 2, 3, 3}, rng);
    BatchNormState<double> st(2);
    const auto y = batch_norm(x, Tensor<double>::ones(Shape{1, 2, 1, 1}), Tensor<double>::zeros(Shape{1, 2, 1, 1}), st,
                              Mode::eval);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], x[i] / std::sqrt(1 + 1e-5), 1e-15);
}

TEST(BatchNorm, RunningStatsUpdate) {
    Tensor<double> x(Shape{2, 1, 1, 2}, std::vector<double>{1, 2, 3, 4});
    BatchNormState<double> st(1);
    batch_norm(x, Tensor<double>::ones(Shape{1, 1, 1, 1}), Tensor<double>::zeros(Shape{1, 1, 1, 1}), st, Mode::train);
    // mean 2.5, unbiased variance 5/3.
    EXPECT_NEAR(st.running_mean[0], 0.1 * 2.5, 1e-15);
    EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-15);
}

TEST(BatchNorm, Gradients) {
    auto rng = rng_for(15);
    auto x = oracle::random(Shape{3, 2, 3, 3}, rng);
    auto g = oracle::random(Shape{1, 2, 1, 1}, rng, 0.5, 1.5);
    auto b = oracle::random(Shape{1, 2, 1, 1}, rng);
    BatchNormState<double> st(2);
    EXPECT_LT(harness::grad_error({x, g, b}, [&] { return batch_norm(x, g, b, st, Mode::train); }), 1e-5);
    EXPECT_LT(harness::grad_error({x, g, b}, [&] { return batch_norm(x, g, b, st, Mode::eval); }), 1e-6);
}

TEST(Heads, ReluValues) {
    const Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{-1, 0, 2});
    const auto y = relu(x);
    EXPECT_EQ(y[0], 0);
    EXPECT_EQ(y[1], 0);
    EXPECT_EQ(y[2], 2);
}

TEST(Heads, ReluSubgradientAtZeroIsZero) {
    Tensor<double> x(Shape{1, 1, 1, 1}, 0.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    {
        Tape<double>::Scope s(tape);
        tape.backward(sum(relu(x)));
    }
    EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Heads, GlobalAvgPoolOfConstant) {
    const auto y = global_avg_pool(Tensor<double>::full(Shape{2, 3, 5, 5}, 1.75));
    EXPECT_EQ(y.shape(), (Shape{2, 3, 1, 1}));
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.75);
}

TEST(Heads, UniformLogitsCrossEntropyIsLogTen) {
    const auto logits = Tensor<double>::full(Shape{4, 10, 1, 1}, 0.3);
    const std::vector<int> labels{0, 3, 9, 5};
    EXPECT_NEAR(softmax_cross_entropy(logits, std::span<const int>(labels)).item(), std::log(10.0), 1e-12);
    EXPECT_NEAR(std::log(10.0), 2.302585, 1e-6);
}

TEST(Heads, CrossEntropyLabelOutOfRange) {
    const auto logits = Tensor<double>::zeros(Shape{1, 10, 1, 1});
    const std::vector<int> bad{10}, neg{-1};
    EXPECT_THROW(softmax_cross_entropy(logits, std::span<const int>(bad)), std::out_of_range);
    EXPECT_THROW(softmax_cross_entropy(logits, std::span<const int>(neg)), std::out_of_range);
}

TEST(Heads, CrossEntropyStableForLargeLogits) {
    Tensor<double> logits(Shape{1, 3, 1, 1}, std::vector<double>{1000, 0, -1000});
    const std::vector<int> y{0};
    const double l = softmax_cross_entropy(logits, std::span<const int>(y)).item();
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_NEAR(l, 0.0, 1e-12);
}

TEST(Heads, Gradients) {
    auto rng = rng_for(16);
    auto x = oracle::random(Shape{2, 3, 4, 4}, rng);
    EXPECT_LT(harness::grad_error({x}, [&] { return global_avg_pool(x); }), 1e-6);
    EXPECT_LT(harness::grad_error({x}, [&] { return max_pool2x2(x); }), 1e-6);
    auto f = oracle::random(Shape{3, 4, 1, 1}, rng);
    auto W = oracle::random(Shape{5, 4, 1, 1}, rng);
    auto b = oracle::random(Shape{1, 5, 1, 1}, rng);
    EXPECT_LT(harness::grad_error({f, W, b}, [&] { return linear(f, W, b); }), 1e-6);

    auto logits = oracle::random(Shape{3, 5, 1, 1}, rng, -2, 2);
    const std::vector<int> labels{4, 0, 2};
    EXPECT_LT(harness::grad_error({logits}, [&] { return softmax_cross_entropy(logits, std::span<const int>(labels)); }), 1e-6);
}

TEST(Backward, SumGivesOnes) {
    auto rng = rng_for(17);
    auto x = oracle::random(Shape{1, 2, 3, 3}, rng);
    x.set_requires_grad(true);
    Tape<double> tape;
    {
        Tape<double>::Scope s(tape);
        tape.backward(sum(x));
    }
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwoX) {
    auto rng = rng_for(18);
    auto x = oracle::random(Shape{1, 2, 3, 3}, rng);
    x.set_requires_grad(true);
    Tape<double> tape;
    {
        Tape<double>::Scope s(tape);
        tape.backward(sum(mul(x, x)));
    }
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Backward, RepeatedCallsAccumulate) {
    auto x = Tensor<double>::full(Shape{1, 1, 2, 2}, 3.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    Tape<double>::Scope s(tape);
    const auto loss = sum(mul(x, x));
    tape.backward(loss);
    tape.backward(loss);
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 12.0);
}

TEST(Backward, NonScalarRejected) {
    auto x = Tensor<double>::ones(Shape{1, 1, 2, 2});
    x.set_requires_grad(true);
    Tape<double> tape;
    Tape<double>::Scope s(tape);
    const auto y = mul(x, x);
    EXPECT_THROW(tape.backward(y), shape_error);
}

TEST(Backward, ReplaysInReverseOrderOnce) {
    auto x = Tensor<double>::ones(Shape{1, 1, 2, 2});
    x.set_requires_grad(true);
    Tape<double> tape;
    Tape<double>::Scope s(tape);
    const auto loss = sum(relu(scale(add(x, x), 2.0)));
    ASSERT_EQ(tape.size(), 4u);
    tape.backward(loss);
    const std::vector<std::string> want{"sum", "relu", "scale", "add"};
    EXPECT_EQ(tape.last_replay(), want);
}

TEST(Backward, LinearInLossScale) {
    auto rng = rng_for(19);
    auto x = oracle::random(Shape{2, 2, 3, 3}, rng);
    auto k = oracle::random(Shape{2, 2, 3, 3}, rng);
    k.set_requires_grad(true);
    auto grads = [&](double alpha) {
        k.zero_grad();
        Tape<double> tape;
        Tape<double>::Scope s(tape);
        tape.backward(scale(sum(relu(conv3x3(x, k))), alpha));
        return std::vector<double>(k.grad().begin(), k.grad().end());
    };
    const auto g1 = grads(1.0), g3 = grads(-3.0);
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g3[i], -3.0 * g1[i], 1e-12 * (1 + std::fabs(g1[i])));
}

TEST(Backward, NoTapeRecordsNothing) {
    auto x = Tensor<double>::ones(Shape{1, 1, 2, 2});
    x.set_requires_grad(true);
    const auto y = mul(x, x);
    EXPECT_TRUE(y.is_leaf());
    EXPECT_FALSE(y.requires_grad());
}

TEST(Finiteness, OpsPropagateFiniteValues) {
    auto rng = rng_for(20);
    auto x = oracle::random(Shape{2, 2, 4, 4}, rng, -1e3, 1e3);
    auto k = oracle::random(Shape{2, 2, 3, 3}, rng);
    BatchNormState<double> st(2);
    const auto y = batch_norm(conv3x3(x, k), Tensor<double>::ones(Shape{1, 2, 1, 1}), Tensor<double>::zeros(Shape{1, 2, 1, 1}),
                              st, Mode::train);
    EXPECT_TRUE(all_finite(y.data()));
}
