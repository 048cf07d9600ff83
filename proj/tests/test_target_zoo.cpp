// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "zsinv/target_zoo.hpp"

using namespace zsinv;
using namespace zsinv::zoo;

namespace {

ShapesConfig small_shapes(std::uint64_t seed = 3) {
    ShapesConfig c;
    c.seed = seed;
    c.train_per_class = 60;
    c.val_per_class = 20;
    return c;
}

} // namespace

TEST(Shapes, Deterministic) {
    auto a = gen_shapes(small_shapes()), b = gen_shapes(small_shapes());
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.val, b.val);
    EXPECT_FALSE(gen_shapes(small_shapes(4)).train == a.train);
}

TEST(Shapes, DiskGeometry) {
    auto cfg = small_shapes();
    auto d = gen_shapes(cfg);
    const Tensor& img = d.train.images();
    const std::size_t n = cfg.size;
    for (std::size_t i = 1; i < 30; i += 3) {  // class 1 sits at i % 3 == 1
        ASSERT_EQ(d.train.labels()[i], 1u);
        auto s = sample_shape(cfg, ShapeClass::disk, shape_seed(cfg, 0, i));
        const double* p = img.data().data() + i * n * n;
        EXPECT_EQ(p[s.cy * n + s.cx], s.color[0]);
        EXPECT_EQ(p[0], 0.0);
        EXPECT_EQ(p[n * n - 1], 0.0);
        // a pixel just beyond the radius is background
        EXPECT_EQ(p[s.cy * n + s.cx + s.half_h + 1], 0.0);
        EXPECT_GE(s.color[0], cfg.intensity_min);
        EXPECT_LE(s.color[0], cfg.intensity_max);
    }
}

TEST(Shapes, InsideCanvasAndRange) {
    auto cfg = small_shapes();
    cfg.channels = 3;
    auto d = gen_shapes(cfg);
    const Tensor& img = d.train.images();
    for (double v : img.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    // border rows and columns stay background
    const std::size_t n = cfg.size;
    for (std::size_t i = 0; i < d.train.size() * 3; ++i) {
        const double* p = img.data().data() + i * n * n;
        for (std::size_t k = 0; k < n; ++k) {
            ASSERT_EQ(p[k], 0.0);
            ASSERT_EQ(p[(n - 1) * n + k], 0.0);
            ASSERT_EQ(p[k * n], 0.0);
            ASSERT_EQ(p[k * n + n - 1], 0.0);
        }
    }
}

TEST(Shapes, UniformLabels) {
    auto d = gen_shapes(small_shapes());
    std::size_t hist[3] = {0, 0, 0};
    for (auto l : d.train.labels()) ++hist[l];
    EXPECT_EQ(hist[0], 60u);
    EXPECT_EQ(hist[1], 60u);
    EXPECT_EQ(hist[2], 60u);
}

TEST(Shapes, RejectsBadConfig) {
    auto c = small_shapes();
    c.channels = 2;
    EXPECT_THROW(gen_shapes(c), ConfigError);
}

TEST(Specs, MicroVggStructure) {
    auto s = micro_vgg_spec();
    EXPECT_EQ(s.num_blocks(), 7u);
    EXPECT_EQ(net::output_shape(s), (Shape{3}));
    EXPECT_EQ(net::block_output_shape(s, 6), (Shape{128, 4, 4}));
    std::size_t bn = 0;
    for (const auto& l : s.layers) bn += l.has_bn;
    EXPECT_EQ(bn, 6u);
    auto m = net::mirror_spec(s);
    EXPECT_NO_THROW(net::validate(m));
    EXPECT_EQ(net::output_shape(m), s.input_shape);
}

TEST(Specs, MicroGenStructure) {
    auto g = micro_gen_spec();
    EXPECT_EQ(g.input_shape, (Shape{32}));
    EXPECT_EQ(net::output_shape(g), (Shape{1, 32, 32}));
    auto m = net::mirror_spec(g);
    EXPECT_EQ(net::output_shape(m), (Shape{32}));
}

TEST(Classifier, UntrainedIsChance) {
    auto spec = micro_vgg_spec();
    auto d = gen_shapes(small_shapes());
    auto ps = net::init_params(spec, 1);
    EXPECT_NEAR(accuracy(spec, ps, d.val.images(), d.val.labels()), 1.0 / 3.0, 0.1);
}

TEST(Classifier, TrainsAboveNinetyPercent) {
    auto spec = micro_vgg_spec();
    auto cfg = small_shapes();
    cfg.train_per_class = 400;
    cfg.val_per_class = 50;
    auto d = gen_shapes(cfg);
    ClassifierConfig cc;
    cc.epochs = 2;
    cc.seed = 5;
    ClassifierReport rep;
    auto ps = train_classifier(spec, d, cc, &rep);
    EXPECT_GT(rep.epoch_val_accuracy[0], 1.0 / 3.0 + 0.1);  // above chance after one epoch
    EXPECT_GE(rep.val_accuracy, 0.9);
    for (const auto& [k, rs] : ps.running)
        for (double v : rs.var.data()) EXPECT_GT(v, 0.0);
}

TEST(Classifier, Deterministic) {
    auto spec = micro_vgg_spec();
    auto cfg = small_shapes();
    cfg.train_per_class = 20;
    cfg.val_per_class = 0;
    auto d = gen_shapes(cfg);
    ClassifierConfig cc;
    cc.epochs = 1;
    EXPECT_EQ(train_classifier(spec, d, cc), train_classifier(spec, d, cc));
}

TEST(Latent, Statistics) {
    const std::size_t d = 32, n = 500;
    Tensor z = sample_latent(d, n, 9);
    EXPECT_EQ(z.shape(), (Shape{n, d}));
    double sum = 0, sq = 0;
    for (double v : z.data()) {
        sum += v;
        sq += v * v;
    }
    const double mean = sum / double(n * d);
    EXPECT_LT(std::abs(mean), 3.0 / std::sqrt(double(n * d)));
    EXPECT_NEAR(sq / double(n * d) - mean * mean, 1.0, 0.1);
    EXPECT_EQ(sample_latent(d, n, 9), z);
}

TEST(Generator, DecoderDeterministicAndInRange) {
    auto g = micro_gen_spec();
    auto cfg = small_shapes();
    cfg.train_per_class = 10;
    cfg.val_per_class = 0;
    auto d = gen_shapes(cfg);
    GeneratorConfig gc;
    gc.iters = 5;
    gc.batch_size = 8;
    GeneratorReport rep;
    auto a = train_generator(g, d.train, gc, &rep);
    EXPECT_EQ(a, train_generator(g, d.train, gc));
    EXPECT_EQ(rep.mode, GeneratorMode::decoder);
    EXPECT_EQ(rep.codes.shape(), (Shape{30, 32}));
    // inflated latents up to 6√d still land in [0,1]
    Tensor z = sample_latent(32, 16, 2);
    for (double& v : z.data()) v *= 6.0;
    for (double v : net::forward_full(g, a, z).back().data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Generator, GanModeRuns) {
    auto g = micro_gen_spec();
    auto cfg = small_shapes();
    cfg.train_per_class = 10;
    cfg.val_per_class = 0;
    auto d = gen_shapes(cfg);
    GeneratorConfig gc;
    gc.mode = GeneratorMode::gan;
    gc.iters = 3;
    gc.batch_size = 8;
    GeneratorReport rep;
    auto a = train_generator(g, d.train, gc, &rep);
    EXPECT_EQ(a, train_generator(g, d.train, gc));
    EXPECT_EQ(rep.mode, GeneratorMode::gan);
    EXPECT_TRUE(std::isfinite(rep.final_critic_loss));
    EXPECT_FALSE(rep.collapse_warning);
}
