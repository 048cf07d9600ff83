// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "zsinv/batchnorm.hpp"
#include "zsinv/conv.hpp"
#include "zsinv/grad_check.hpp"

using namespace zsinv;
using namespace zsinv::ad;
using zsinv::testing::randn;
using zsinv::testing::randu;

namespace {

// Direct six-loop cross-correlation, independent of the im2col/GEMM path.
Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t s, std::size_t p) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t ho = (h + 2 * p - kh) / s + 1, wo = (wd + 2 * p - kw) / s + 1;
    Tensor y({n, o, ho, wo});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t oi = 0; oi < ho; ++oi)
                for (std::size_t oj = 0; oj < wo; ++oj) {
                    double acc = b[oc];
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t ki = 0; ki < kh; ++ki)
                            for (std::size_t kj = 0; kj < kw; ++kj) {
                                const long ii = long(oi * s + ki) - long(p), jj = long(oj * s + kj) - long(p);
                                if (ii < 0 || jj < 0 || ii >= long(h) || jj >= long(wd)) continue;
                                acc += x[((i * c + ch) * h + ii) * wd + jj] * w[((oc * c + ch) * kh + ki) * kw + kj];
                            }
                    y[((i * o + oc) * ho + oi) * wo + oj] = acc;
                }
    return y;
}

Tensor run_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t s, std::size_t p) {
    Graph g;
    return conv2d(g.constant(x), g.constant(w), g.constant(b), s, p).value();
}

Tensor run_convt(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t s, std::size_t p) {
    Graph g;
    return conv_transpose2d(g.constant(x), g.constant(w), g.constant(b), s, p).value();
}

// Weighted sum with fixed random weights: turns any tensor-valued op into a
// scalar whose gradient is generically non-zero.
Var project(Graph& g, Var y, std::uint64_t seed) {
    return sum(mul(y, g.constant(randn(y.shape(), seed))));
}

} // namespace

// --- matmul ---------------------------------------------------------------

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    Graph g;
    Var i2 = g.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Var m = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    EXPECT_EQ(matmul(i2, m).value(), Tensor({2, 2}, {1, 2, 3, 4}));
}

TEST(Matmul, RowTimesColumn) {
    Graph g;
    Var c = matmul(g.constant(Tensor({1, 2}, {1, 2})), g.constant(Tensor({2, 1}, {3, 4})));
    EXPECT_EQ(c.value().shape(), (Shape{1, 1}));
    EXPECT_DOUBLE_EQ(c.value().item(), 11.0);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
    Graph g;
    EXPECT_THROW(matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3}))), DimensionError);
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
    const Tensor b = randn({4, 3}, 11);
    auto rep = grad_check([&](Graph& g, Var a) { return sum(matmul(a, g.constant(b))); }, randn({2, 4}, 12));
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
    auto rep_b = grad_check([&](Graph& g, Var bb) { return project(g, matmul(g.constant(randn({2, 4}, 3)), bb), 4); }, b);
    EXPECT_TRUE(rep_b.passed) << rep_b.max_rel_error;
}

// --- conv2d ---------------------------------------------------------------

TEST(Conv2d, TwoByTwoDiagonalKernel) {
    Tensor y = run_conv(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), Tensor({1, 1, 2, 2}, {1, 0, 0, 1}), Tensor({1}), 1, 0);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y.item(), 5.0);
}

TEST(Conv2d, ZeroKernelGivesZeroOutput) {
    Tensor y = run_conv(randn({2, 3, 5, 5}, 1), Tensor({4, 3, 3, 3}), Tensor({4}), 1, 1);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, MatchesDirectSummation) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Tensor x = randn({2, 3, 7, 7}, seed), w = randn({4, 3, 3, 3}, seed + 100), b = randn({4}, seed + 200);
        EXPECT_LT(max_abs_diff(run_conv(x, w, b, 2, 1), naive_conv2d(x, w, b, 2, 1)), 1e-12);
        EXPECT_LT(max_abs_diff(run_conv(x, w, b, 1, 0), naive_conv2d(x, w, b, 1, 0)), 1e-12);
    }
}

TEST(Conv2d, NonIntegralExtentRejected) {
    EXPECT_THROW(run_conv(Tensor({1, 1, 32, 32}), Tensor({1, 1, 3, 3}), Tensor({1}), 2, 1), ConfigError);
    EXPECT_THROW(run_conv(Tensor({1, 1, 2, 2}), Tensor({1, 1, 5, 5}), Tensor({1}), 1, 0), ConfigError);
}

TEST(Conv2d, LinearInInput) {
    const Tensor w = randn({3, 2, 3, 3}, 5), zero_b = Tensor({3});
    const Tensor x1 = randn({2, 2, 7, 7}, 6), x2 = randn({2, 2, 7, 7}, 7);
    const double alpha = 1.7;
    Tensor combo(x1.shape());
    for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = alpha * x1[i] + x2[i];
    const Tensor lhs = run_conv(combo, w, zero_b, 2, 0);
    const Tensor y1 = run_conv(x1, w, zero_b, 2, 0), y2 = run_conv(x2, w, zero_b, 2, 0);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], alpha * y1[i] + y2[i], 1e-10);
}

// --- conv_transpose2d -----------------------------------------------------

TEST(ConvTranspose2d, AdjointIdentityOverRandomShapes) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<std::size_t> small(1, 3), ks(1, 4), st(1, 3), pd(0, 2), ext(4, 9);
        const std::size_t n = small(rng), c = small(rng), o = small(rng), k = ks(rng), s = st(rng);
        const std::size_t p = std::min(pd(rng), k - 1);
        // choose H so the conv extent is integral
        std::size_t h = ext(rng);
        while ((h + 2 * p - k) % s != 0) ++h;
        const std::size_t ho = (h + 2 * p - k) / s + 1;
        const Tensor x = randn({n, c, h, h}, 10 * trial + 1), w = randn({o, c, k, k}, 10 * trial + 2);
        const Tensor y = randn({n, o, ho, ho}, 10 * trial + 3);
        const double lhs = dot(run_conv(x, w, Tensor({o}), s, p), y);
        const double rhs = dot(x, run_convt(y, w, Tensor({c}), s, p));
        EXPECT_NEAR(lhs, rhs, 1e-8) << "trial " << trial;
    }
}

TEST(ConvTranspose2d, StrideTwoOnesKernelReplicatesInput) {
    Tensor y = run_convt(Tensor({1, 1, 1, 1}, {3.5}), Tensor::full({1, 1, 2, 2}, 1.0), Tensor({1}), 2, 0);
    EXPECT_EQ(y, Tensor::full({1, 1, 2, 2}, 3.5));
}

TEST(ConvTranspose2d, ZeroInputGivesBiasBroadcast) {
    Tensor y = run_convt(Tensor({2, 3, 4, 4}), randn({3, 2, 4, 4}, 9), Tensor({2}, {0.25, -1.5}), 2, 1);
    ASSERT_EQ(y.shape(), (Shape{2, 2, 8, 8}));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], ((i / 64) % 2 == 0) ? 0.25 : -1.5);
}

// --- activations ------------------------------------------------------------

TEST(Activation, ReluAndLeakyDefinitions) {
    Graph g;
    EXPECT_EQ(relu(g.constant(Tensor({3}, {-1, 0, 2}))).value(), Tensor({3}, {0, 0, 2}));
    Tensor l = leaky_relu(g.constant(Tensor({2}, {-1, 2})), 0.1).value();
    EXPECT_DOUBLE_EQ(l[0], -0.1);
    EXPECT_DOUBLE_EQ(l[1], 2.0);
}

TEST(Activation, SubgradientsAtZero) {
    Graph g;
    Var x = g.leaf(Tensor({3}, {0.0, 2.0, -1.0}));
    g.backward(sum(relu(x)));
    EXPECT_EQ(g.grad(x), Tensor({3}, {0.0, 1.0, 0.0}));

    Graph h;
    Var z = h.leaf(Tensor({2}, {0.0, -3.0}));
    h.backward(sum(leaky_relu(z, 0.2)));
    EXPECT_EQ(h.grad(z), Tensor({2}, {0.2, 0.2}));
}

// --- maxpool --------------------------------------------------------------

TEST(MaxPool, Definition) {
    Graph g;
    EXPECT_DOUBLE_EQ(maxpool2d(g.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2).value().item(), 4.0);
    Tensor c = maxpool2d(g.constant(Tensor::full({2, 3, 4, 4}, 0.7)), 2, 2).value();
    for (double v : c.data()) EXPECT_EQ(v, 0.7);
}

TEST(MaxPool, GradientGoesToFirstArgmaxPerWindow) {
    // Windows with ties: each window's gradient must land on its first
    // row-major maximiser and nowhere else.
    Tensor x({1, 1, 4, 4}, {1, 5, 5, 0, 5, 2, 1, 3, 2, 2, 7, 7, 2, 2, 7, 7});
    Graph g;
    Var xv = g.leaf(x);
    g.backward(sum(maxpool2d(xv, 2, 2)));
    const Tensor gr = g.grad(xv);
    for (std::size_t wi = 0; wi < 2; ++wi) {
        for (std::size_t wj = 0; wj < 2; ++wj) {
            // brute force: first argmax in the window
            std::size_t best = wi * 2 * 4 + wj * 2;
            double mass = 0.0;
            for (std::size_t a = 0; a < 2; ++a)
                for (std::size_t b = 0; b < 2; ++b) {
                    const std::size_t idx = (wi * 2 + a) * 4 + wj * 2 + b;
                    if (x[idx] > x[best]) best = idx;
                    mass += gr[idx];
                }
            EXPECT_DOUBLE_EQ(mass, 1.0);
            EXPECT_DOUBLE_EQ(gr[best], 1.0);
        }
    }
}

TEST(MaxPool, WindowLargerThanInputThrows) {
    Graph g;
    EXPECT_THROW(maxpool2d(g.constant(Tensor({1, 1, 2, 2})), 3, 1), ConfigError);
}

// --- batchnorm / feature stats -----------------------------------------------

TEST(BatchNorm, TrainModeNormalises) {
    Graph g;
    Tensor x = randn({8, 3, 5, 5}, 31, 4.0);
    for (auto& v : x.data()) v += 2.5;
    Tensor y = batchnorm2d(g.constant(x), g.constant(Tensor::full({3}, 1.0)), g.constant(Tensor({3})),
                           BatchNormMode::train, nullptr)
                   .value();
    Graph h;
    Tensor mu = channel_mean(h.constant(y)).value();
    Tensor var = channel_var(h.constant(y)).value();
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_LT(std::abs(mu[c]), 1e-10);
        // ε = 1e-5 shrinks the variance by var/(var+ε); the input variance is ≈16.
        EXPECT_LT(std::abs(var[c] - 1.0), 1e-5);
    }
}

TEST(BatchNorm, TrainModeUnitVarianceBeforeEpsilon) {
    Graph g;
    Tensor x = randn({8, 2, 4, 4}, 41);
    Tensor y = batchnorm2d(g.constant(x), g.constant(Tensor::full({2}, 1.0)), g.constant(Tensor({2})),
                           BatchNormMode::train, nullptr, {0.0, 0.1})
                   .value();
    Graph h;
    Tensor var = channel_var(h.constant(y)).value();
    for (std::size_t c = 0; c < 2; ++c) EXPECT_LT(std::abs(var[c] - 1.0), 1e-9);
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
    Graph g;
    RunningStats rs = RunningStats::fresh(2);
    Tensor x = randn({3, 2, 4, 4}, 5);
    Tensor y = batchnorm2d(g.constant(x), g.constant(Tensor::full({2}, 1.0)), g.constant(Tensor({2})),
                           BatchNormMode::eval, &rs, {0.0, 0.1})
                   .value();
    EXPECT_LT(max_abs_diff(x, y), 1e-15);
}

TEST(BatchNorm, RunningStatUpdateIsExponentialAverage) {
    Graph g;
    RunningStats rs{Tensor({2}, {0.3, -0.2}), Tensor({2}, {2.0, 0.5})};
    const RunningStats old = rs;
    Tensor x = randn({4, 2, 3, 3}, 8);
    batchnorm2d(g.constant(x), g.constant(Tensor::full({2}, 1.0)), g.constant(Tensor({2})), BatchNormMode::train, &rs);
    // scalar recomputation of the batch moments
    for (std::size_t c = 0; c < 2; ++c) {
        double m = 0.0, q = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t p = 0; p < 9; ++p) m += x[(i * 2 + c) * 9 + p];
        m /= 36.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t p = 0; p < 9; ++p) q += std::pow(x[(i * 2 + c) * 9 + p] - m, 2);
        q /= 36.0;
        EXPECT_NEAR(rs.mean[c], 0.9 * old.mean[c] + 0.1 * m, 1e-15);
        EXPECT_NEAR(rs.var[c], 0.9 * old.var[c] + 0.1 * q, 1e-15);
    }
}

TEST(BatchNorm, EvalModeWithoutStatsThrows) {
    Graph g;
    EXPECT_THROW(batchnorm2d(g.constant(Tensor({1, 1, 2, 2})), g.constant(Tensor({1})), g.constant(Tensor({1})),
                             BatchNormMode::eval, nullptr),
                 ConfigError);
}

TEST(FeatureStats, TwoPointAndConstantChannels) {
    Graph g;
    // channel 0 holds {1,3}; channel 1 is constant
    auto st = feature_stats(g.constant(Tensor({2, 2, 1, 1}, {1, 5, 3, 5})));
    EXPECT_DOUBLE_EQ(st.mean.value()[0], 2.0);
    EXPECT_DOUBLE_EQ(st.var.value()[0], 1.0);
    EXPECT_DOUBLE_EQ(st.var.value()[1], 0.0);
}

TEST(FeatureStats, MatchesTwoPassBruteForce) {
    Tensor x = randn({5, 4, 6, 3}, 77, 3.0);
    Graph g;
    auto st = feature_stats(g.constant(x));
    for (std::size_t c = 0; c < 4; ++c) {
        std::vector<double> vals;
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t p = 0; p < 18; ++p) vals.push_back(x[(i * 4 + c) * 18 + p]);
        double m = 0.0;
        for (double v : vals) m += v;
        m /= double(vals.size());
        double q = 0.0;
        for (double v : vals) q += (v - m) * (v - m);
        q /= double(vals.size());
        EXPECT_NEAR(st.mean.value()[c], m, 1e-12);
        EXPECT_NEAR(st.var.value()[c], q, 1e-12);
    }
}

// --- losses -------------------------------------------------------------------

TEST(Losses, Definitions) {
    Graph g;
    EXPECT_DOUBLE_EQ(l1_loss(g.constant(Tensor({2}, {1, 2})), g.constant(Tensor({2}, {1, 3}))).value().item(), 0.5);
    const std::size_t label0[] = {0};
    EXPECT_NEAR(cross_entropy(g.constant(Tensor({2}, {0, 0})), label0).value().item(), std::numbers::ln2, 1e-15);
    EXPECT_EQ(total_variation(g.constant(Tensor::full({2, 1, 4, 4}, 0.3))).value().item(), 0.0);
    EXPECT_DOUBLE_EQ(l2_stat_loss(g.constant(Tensor({2}, {0, 0})), g.constant(Tensor({2}, {3, 4}))).value().item(), 5.0);
}

TEST(Losses, CrossEntropyIsStableForLargeLogits) {
    Graph g;
    const std::size_t label[] = {1};
    const double ce = cross_entropy(g.constant(Tensor({1, 2}, {1000.0, 0.0})), label).value().item();
    EXPECT_NEAR(ce, 1000.0, 1e-9);
}

// --- backward contract ------------------------------------------------------------

TEST(Backward, SumGivesAllOnes) {
    Graph g;
    Var x = g.leaf(randn({2, 3, 4}, 3));
    g.backward(sum(x));
    EXPECT_EQ(g.grad(x), Tensor::full({2, 3, 4}, 1.0));
}

TEST(Backward, ZeroWeightedBranchContributesNothing) {
    Graph g;
    Var x = g.leaf(randn({5}, 4));
    Var loss = add(scale(sum(mul(x, x)), 0.0), sum(x));
    g.backward(loss);
    EXPECT_EQ(g.grad(x), Tensor::full({5}, 1.0));
}

TEST(Backward, ErrorsOnMisuse) {
    Graph g;
    Var x = g.leaf(randn({3}, 1));
    Var s = sum(x);
    EXPECT_THROW(g.backward(x), GraphError);  // non-scalar
    g.backward(s);
    EXPECT_THROW(g.backward(s), GraphError);  // repeated without reset
    g.zero_grad();
    EXPECT_NO_THROW(g.backward(s));

    Graph h;
    Var c = sum(h.constant(randn({3}, 2)));
    EXPECT_THROW(h.backward(c), GraphError);  // detached
    EXPECT_THROW(g.backward(c), GraphError);  // other graph
}

TEST(Backward, NonFiniteValuesRejected) {
    EXPECT_THROW(Tensor({1}, {std::nan("")}), NumericError);
    Graph g;
    Var x = g.leaf(Tensor({1}, {1e300}));
    EXPECT_THROW(mul(x, x), NumericError);
}

TEST(Backward, CompositeConvReluL1MatchesFiniteDifferences) {
    const Tensor w = randn({4, 2, 3, 3}, 21), b = randn({4}, 22), target = randn({2, 4, 5, 5}, 23);
    auto f = [&](Graph& g, Var x) {
        return l1_loss(relu(conv2d(x, g.constant(w), g.constant(b), 1, 1)), g.constant(target));
    };
    auto rep = grad_check(f, randn({2, 2, 5, 5}, 24), 1e-5, 1e-6);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

// --- grad_check -------------------------------------------------------------------

TEST(GradCheck, SumIsExact) {
    auto rep = grad_check([](Graph&, Var x) { return sum(x); }, randn({3, 4}, 1));
    // exact up to the rounding of x ± h
    EXPECT_LT(rep.max_rel_error, 1e-9);
    EXPECT_TRUE(rep.passed);
}

TEST(GradCheck, ConvBatchNormLeakyComposite) {
    const Tensor w = randn({3, 2, 3, 3}, 51), b = randn({3}, 52), gam = randu({3}, 53, 0.5, 1.5), bet = randn({3}, 54);
    auto f = [&](Graph& g, Var x) {
        Var y = conv2d(x, g.constant(w), g.constant(b), 1, 1);
        y = batchnorm2d(y, g.constant(gam), g.constant(bet), BatchNormMode::train, nullptr);
        return project(g, leaky_relu(y, 0.2), 55);
    };
    auto rep = grad_check(f, randn({3, 2, 4, 4}, 56));
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(GradCheck, CorruptedGradientFails) {
    auto f = [](Graph& g, Var x) { return project(g, mul(x, x), 9); };
    const Tensor x = randn({6}, 2);
    Tensor bad = analytic_gradient(f, x);
    bad[3] += 0.5;
    EXPECT_FALSE(compare_gradient(f, x, bad, 1e-5, 1e-6).passed);
}

// --- property: every differentiable op passes grad_check on 10 seeds --------------

#include "op_catalog.hpp"

class OpGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(OpGradient, PassesOnTenSeeds) {
    for (const auto& op : zsinv::testing::op_catalog()) {
        if (op.name != GetParam()) continue;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            auto rep = op.run(seed * 7919);
            EXPECT_TRUE(rep.passed) << op.name << " seed " << seed << " rel err " << rep.max_rel_error;
        }
        return;
    }
    FAIL() << "unknown op " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn([] {
                             std::vector<std::string> names;
                             for (const auto& op : zsinv::testing::op_catalog()) names.push_back(op.name);
                             return names;
                         }()),
                         [](const auto& info) {
                             std::string n = info.param;
                             for (auto& ch : n) if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
                             return n;
                         });

TEST(Determinism, ConvBackwardIsBitIdentical) {
    auto once = [] {
        Graph g;
        Var x = g.leaf(randn({3, 2, 8, 8}, 1));
        Var w = g.leaf(randn({4, 2, 3, 3}, 2));
        Var b = g.leaf(randn({4}, 3));
        Var y = batchnorm2d(conv2d(x, w, b, 1, 1), g.constant(Tensor::full({4}, 1.0)), g.constant(Tensor({4})),
                            BatchNormMode::train, nullptr);
        g.backward(sum(mul(y, y)));
        return std::vector<Tensor>{y.value(), g.grad(x), g.grad(w), g.grad(b)};
    };
    EXPECT_EQ(once(), once());
}
