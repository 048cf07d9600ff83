// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "zsinv/optimizer.hpp"

using namespace zsinv;
using namespace zsinv::opt;

namespace {

std::map<std::string, Tensor> one(double v) { return {{"w", Tensor::scalar(v)}}; }

// Textbook scalar Adam, written out independently of the library loop.
struct ScalarAdam {
    double m = 0, v = 0, theta;
    int t = 0;
    explicit ScalarAdam(double th) : theta(th) {}
    void step(double g, double lr) {
        ++t;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t));
        const double vh = v / (1 - std::pow(0.999, t));
        theta -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
};

} // namespace

TEST(Adam, ZeroGradientLeavesParams) {
    auto p = one(1.5);
    AdamState st;
    adam_step(p, one(0.0), st, 0.1);
    EXPECT_EQ(p.at("w").item(), 1.5);
    EXPECT_EQ(st.t, 1u);
}

TEST(Adam, FirstStepUnitGradient) {
    auto p = one(0.0);
    AdamState st;
    adam_step(p, one(1.0), st, 0.1);
    EXPECT_NEAR(p.at("w").item(), -0.1 / (1 + 1e-8), 1e-15);
}

TEST(Adam, TwoStepsMatchScalarReference) {
    auto p = one(0.3);
    AdamState st;
    ScalarAdam ref(0.3);
    for (int i = 0; i < 2; ++i) {
        adam_step(p, one(0.7), st, 0.05);
        ref.step(0.7, 0.05);
    }
    EXPECT_NEAR(p.at("w").item(), ref.theta, 1e-15);
}

TEST(Adam, VaryingGradientsMatchReference) {
    auto p = one(-1.0);
    AdamState st;
    ScalarAdam ref(-1.0);
    for (int i = 0; i < 50; ++i) {
        const double g = std::sin(0.3 * i) * 2.0 + 0.1;
        adam_step(p, one(g), st, 0.01);
        ref.step(g, 0.01);
    }
    EXPECT_NEAR(p.at("w").item(), ref.theta, 1e-14);
}

TEST(Adam, OnlyNamedParamsMove) {
    std::map<std::string, Tensor> p{{"a", Tensor::scalar(1)}, {"b", Tensor::scalar(2)}};
    AdamState st;
    adam_step(p, {{"a", Tensor::scalar(1)}}, st, 0.1);
    EXPECT_NE(p.at("a").item(), 1.0);
    EXPECT_EQ(p.at("b").item(), 2.0);
}

TEST(Adam, NonFiniteGradientAborts) {
    auto p = one(1.0);
    AdamState st;
    Tensor g = Tensor::scalar(0.0);
    g.data()[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(adam_step(p, {{"w", g}}, st, 0.1), NumericError);
    EXPECT_EQ(p.at("w").item(), 1.0);
    EXPECT_EQ(st.t, 0u);
}

TEST(Adam, ShapeAndNameErrors) {
    auto p = one(1.0);
    AdamState st;
    EXPECT_THROW(adam_step(p, {{"w", Tensor::zeros({2})}}, st, 0.1), DimensionError);
    EXPECT_THROW(adam_step(p, {{"q", Tensor::scalar(1)}}, st, 0.1), ConfigError);
}

TEST(Adam, Deterministic) {
    auto run = [] {
        std::map<std::string, Tensor> p{{"w", zsinv::testing::randn({4, 3}, 1)}};
        AdamState st;
        for (int i = 0; i < 20; ++i) adam_step(p, {{"w", zsinv::testing::randn({4, 3}, 100 + i)}}, st, 0.01);
        return std::make_pair(p, st);
    };
    auto a = run(), b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_TRUE(a.second == b.second);
}

// Convex quadratic 0.5 Σ d_i (w_i − c_i)²: Adam + schedule removes 99% of the loss.
TEST(Adam, ConvexQuadraticWithSchedule) {
    const std::size_t n = 8;
    Tensor c = zsinv::testing::randn({n}, 3, 2.0);
    Tensor d = zsinv::testing::randu({n}, 4, 0.5, 5.0);
    std::map<std::string, Tensor> p{{"w", Tensor::zeros({n})}};
    auto loss = [&] {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += 0.5 * d[i] * std::pow(p.at("w")[i] - c[i], 2);
        return s;
    };
    const double l0 = loss();
    ScheduleConfig sc{0.1, 1e-4, 1000, 3};
    AdamState st;
    for (std::size_t it = 0; it < 1000; ++it) {
        Tensor g({n});
        for (std::size_t i = 0; i < n; ++i) g[i] = d[i] * (p.at("w")[i] - c[i]);
        adam_step(p, {{"w", g}}, st, lr_at(sc, it));
    }
    EXPECT_LT(loss(), 0.01 * l0);
}

// --- schedule ---------------------------------------------------------------------

TEST(Schedule, StartsAtMax) {
    ScheduleConfig c{1e-3, 1e-5, 3000, 3};
    EXPECT_EQ(lr_at(c, 0), 1e-3);
}

TEST(Schedule, MidpointIsAverage) {
    ScheduleConfig c{1e-3, 1e-5, 400, 3};
    EXPECT_NEAR(lr_at(c, 50), 0.5 * (1e-3 + 1e-5), 1e-18);
    EXPECT_NEAR(lr_at(c, 250), 0.5 * (1e-3 + 1e-5), 1e-18);
}

TEST(Schedule, WarmRestartAtPeriodTwo) {
    ScheduleConfig c{1e-3, 0.0, 400, 3};
    EXPECT_EQ(lr_at(c, 100), 1e-3);
    EXPECT_LT(lr_at(c, 99), 1e-6);
}

TEST(Schedule, ExactlyRestartsInteriorResets) {
    for (std::size_t total : {8u, 401u, 1000u, 3000u}) {
        for (std::size_t r : {0u, 1u, 3u}) {
            ScheduleConfig c{1.0, 0.1, total, r};
            std::size_t resets = 0;
            for (std::size_t i = 1; i < total; ++i) {
                if (lr_at(c, i) > lr_at(c, i - 1)) {
                    ++resets;
                    EXPECT_EQ(lr_at(c, i), 1.0);
                }
            }
            EXPECT_EQ(resets, r) << "total " << total;
        }
    }
}

TEST(Schedule, BoundsAndErrors) {
    ScheduleConfig c{1e-3, 1e-4, 100, 3};
    for (std::size_t i = 0; i < 100; ++i) {
        EXPECT_LE(lr_at(c, i), 1e-3);
        EXPECT_GE(lr_at(c, i), 1e-4);
    }
    EXPECT_THROW(lr_at(c, 100), ConfigError);
    EXPECT_THROW(lr_at(ScheduleConfig{1e-4, 1e-3, 100, 3}, 0), ConfigError);
    EXPECT_THROW(lr_at(ScheduleConfig{1e-3, 0, 3, 3}, 0), ConfigError);
}
