// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "zsinv/synthesis.hpp"

using namespace zsinv;
using namespace zsinv::net;
using zsinv::testing::randn;
using zsinv::testing::randu;

namespace {

NetworkSpec tiny_classifier() {
    NetworkSpec s;
    s.name = "tiny";
    s.input_shape = {1, 8, 8};
    s.layers = {
        LayerSpec::conv(1, 4, 3, 1, 1).bn().act(Activation::relu),
        LayerSpec::conv(4, 6, 4, 2, 1).bn().act(Activation::relu),
        LayerSpec::global_avg_pool(),
        LayerSpec::dense(6, 3),
    };
    s.block_ends = {1, 2, 4};
    return s;
}

ParamStore with_stats(const NetworkSpec& spec, std::uint64_t seed) {
    ParamStore ps = init_params(spec, seed);
    std::uint64_t s = seed * 31;
    for (auto& [k, rs] : ps.running) {
        rs.mean = randn(rs.mean.shape(), ++s, 0.3);
        rs.var = randu(rs.var.shape(), ++s, 0.3, 1.5);
    }
    return ps;
}

// Per-channel mean and biased variance of an N×C×H×W tensor by plain loops.
std::pair<std::vector<double>, std::vector<double>> channel_stats(const Tensor& t) {
    const std::size_t n = t.dim(0), c = t.dim(1), hw = t.size() / (n * c);
    std::vector<double> mu(c, 0.0), var(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) mu[ch] += t[(i * c + ch) * hw + p];
    for (auto& m : mu) m /= double(n * hw);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) {
                const double d = t[(i * c + ch) * hw + p] - mu[ch];
                var[ch] += d * d;
            }
    for (auto& v : var) v /= double(n * hw);
    return {mu, var};
}

double l2(const std::vector<double>& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Pre-BN activations of each conv layer, recomputed from the block outputs
// with a bare convolution.
std::vector<Tensor> bn_inputs_by_hand(const NetworkSpec& spec, const ParamStore& ps, const Tensor& x) {
    auto tr = forward_full(spec, ps, x);
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < 2; ++i) {
        ad::Graph g;
        const auto& l = spec.layers[i];
        out.push_back(ad::conv2d(g.constant(tr[i]), g.constant(ps.at(param_key(i, "weight"))), g.constant(ps.at(param_key(i, "bias"))),
                                 l.stride, l.pad)
                          .value());
    }
    return out;
}

} // namespace

TEST(BnMatch, MatchesPerLayerRecomputation) {
    auto spec = tiny_classifier();
    auto ps = with_stats(spec, 3);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Tensor x = randu({7, 1, 8, 8}, 100 + seed);
        auto u = bn_inputs_by_hand(spec, ps, x);
        double expect = 0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            auto [mu, var] = channel_stats(u[i]);
            const auto& rs = ps.running.at(layer_key(i));
            expect += l2(mu, rs.mean) + l2(var, rs.var);
        }
        EXPECT_NEAR(synth::bn_match_loss(spec, ps, x), expect, 1e-12);
    }
}

TEST(BnMatch, ZeroWhenRunningStatsEqualBatchStats) {
    auto spec = tiny_classifier();
    auto ps = with_stats(spec, 4);
    Tensor x = randu({9, 1, 8, 8}, 5);
    // Fix layers in order: each eval-mode BN then reproduces the batch
    // normalisation, so downstream inputs match what the loss will see.
    for (std::size_t i = 0; i < 2; ++i) {
        auto u = bn_inputs_by_hand(spec, ps, x);
        auto [mu, var] = channel_stats(u[i]);
        auto& rs = ps.running.at(layer_key(i));
        std::copy(mu.begin(), mu.end(), rs.mean.data().begin());
        std::copy(var.begin(), var.end(), rs.var.data().begin());
    }
    EXPECT_LT(synth::bn_match_loss(spec, ps, x), 1e-12);
}

TEST(BnMatch, BatchPermutationInvariant) {
    auto spec = tiny_classifier();
    auto ps = with_stats(spec, 6);
    Tensor x = randu({11, 1, 8, 8}, 7);
    std::vector<std::size_t> perm(11);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(8);
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_NEAR(synth::bn_match_loss(spec, ps, x), synth::bn_match_loss(spec, ps, x.gather_rows(perm)), 1e-12);
}

TEST(BnMatch, NoBatchNormIsConfigError) {
    NetworkSpec s;
    s.name = "plain";
    s.input_shape = {1, 4, 4};
    s.layers = {LayerSpec::conv(1, 2, 3, 1, 1).act(Activation::relu), LayerSpec::global_avg_pool(), LayerSpec::dense(2, 2)};
    s.block_ends = {1, 3};
    auto ps = init_params(s, 1);
    EXPECT_THROW(synth::bn_match_loss(s, ps, randu({2, 1, 4, 4}, 1)), ConfigError);
}

TEST(BnMatch, RejectsWrongInputShape) {
    auto spec = tiny_classifier();
    auto ps = with_stats(spec, 1);
    EXPECT_THROW(synth::bn_match_loss(spec, ps, randu({2, 1, 6, 6}, 1)), DimensionError);
}

TEST(Synthesis, ZeroWeightsLeavePixelsAtInitialisation) {
    auto spec = tiny_classifier();
    auto ps = with_stats(spec, 2);
    synth::SynthesisConfig cfg;
    cfg.batch_size = 5;
    cfg.steps = 20;
    cfg.ce_weight = cfg.bn_weight = cfg.tv_weight = 0.0;
    auto b = synth::synthesize_batch(spec, ps, cfg);
    EXPECT_EQ(b.x, b.x_init);
    EXPECT_EQ(b.final.total, 0.0);
}

TEST(Synthesis, ReducesLossAndRespectsContracts) {
    auto spec = tiny_classifier();
    auto ps = with_stats(spec, 9);
    const ParamStore before = ps;
    synth::SynthesisConfig cfg;
    cfg.batch_size = 16;
    cfg.steps = 150;
    cfg.seed = 4;
    std::size_t calls = 0;
    auto b = synth::synthesize_batch(spec, ps, cfg, 0, [&](std::size_t, const synth::LossTerms& t) {
        ++calls;
        EXPECT_NEAR(t.total, t.ce * cfg.ce_weight + t.bn * cfg.bn_weight + t.tv * cfg.tv_weight, 1e-12);
    });
    EXPECT_EQ(calls, cfg.steps);
    EXPECT_TRUE(ps == before);  // running stats and weights untouched, bit for bit
    // random running stats are not fully reachable, so only a drop is required
    EXPECT_LT(b.final.total, 0.9 * b.initial.total);
    EXPECT_LT(b.final.bn, b.initial.bn);
    for (double v : b.x.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    ASSERT_EQ(b.labels.size(), cfg.batch_size);
    for (auto y : b.labels) EXPECT_LT(y, 3u);
}

TEST(Synthesis, LabelsCoverClassesUniformly) {
    auto spec = tiny_classifier();
    auto ps = with_stats(spec, 9);
    synth::SynthesisConfig cfg;
    cfg.batch_size = 600;
    cfg.steps = 1;
    auto b = synth::synthesize_batch(spec, ps, cfg);
    std::vector<std::size_t> count(3, 0);
    for (auto y : b.labels) ++count[y];
    for (auto c : count) EXPECT_NEAR(double(c), 200.0, 45.0);  // ~4 sd
}

TEST(Synthesis, ConfigValidation) {
    synth::SynthesisConfig cfg;
    cfg.steps = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.tv_weight = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.lr = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(SyntheticSet, SizeDeterminismAndBeatsNoise) {
    auto spec = tiny_classifier();
    auto ps = with_stats(spec, 12);
    synth::SynthesisConfig cfg;
    cfg.batch_size = 8;
    cfg.set_size = 20;
    cfg.steps = 60;
    cfg.seed = 21;
    auto a = synth::build_synthetic_set(spec, ps, cfg);
    auto b = synth::build_synthetic_set(spec, ps, cfg);
    EXPECT_EQ(a.data.size(), 20u);
    EXPECT_EQ(a.batches.size(), 3u);
    EXPECT_EQ(a.data.provenance(), data::Provenance::synthetic);
    EXPECT_TRUE(a.data == b.data);

    cfg.seed = 22;
    auto c = synth::build_synthetic_set(spec, ps, cfg);
    EXPECT_FALSE(a.data == c.data);

    Tensor noise = randu({20, 1, 8, 8}, 77);
    EXPECT_LT(synth::bn_match_loss(spec, ps, a.data.images()), synth::bn_match_loss(spec, ps, noise));
}
