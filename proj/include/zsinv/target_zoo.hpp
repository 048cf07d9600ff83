// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "zsinv/dataset.hpp"
#include "zsinv/network.hpp"
#include "zsinv/optimizer.hpp"
#include "zsinv/rng.hpp"

namespace zsinv::zoo {

// ---------------------------------------------------------------------------
// Shapes dataset
// ---------------------------------------------------------------------------

enum class ShapeClass : std::size_t { rectangle = 0, disk = 1, cross = 2 };
inline constexpr std::size_t kNumClasses = 3;

struct ShapesConfig {
    std::size_t channels = 1;
    std::size_t size = 32;
    std::size_t train_per_class = 400;
    std::size_t val_per_class = 100;
    std::uint64_t seed = 0;
    double intensity_min = 0.5;
    double intensity_max = 1.0;
    double extent_min = 0.2;  // shape extent as a fraction of the canvas
    double extent_max = 0.6;

    void validate() const {
        if (channels != 1 && channels != 3) throw ConfigError("shapes: channels must be 1 or 3");
        if (size < 8) throw ConfigError("shapes: image size must be >= 8");
        if (train_per_class == 0) throw ConfigError("shapes: train_per_class must be >= 1");
        if (!(0.0 < intensity_min && intensity_min <= intensity_max && intensity_max <= 1.0)) {
            throw ConfigError("shapes: need 0 < intensity_min <= intensity_max <= 1");
        }
        if (!(0.0 < extent_min && extent_min <= extent_max && extent_max < 1.0)) {
            throw ConfigError("shapes: need 0 < extent_min <= extent_max < 1");
        }
    }
};

/// Geometry and colour of one drawn shape, kept for oracle tests.
struct ShapeParams {
    ShapeClass cls;
    long cy, cx;          // centre pixel
    long half_h, half_w;  // rectangle half extents; disk uses half_h as radius
    long arm;             // cross arm half thickness
    std::vector<double> color;
};

inline ShapeParams sample_shape(const ShapesConfig& cfg, ShapeClass cls, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto pick = [&](long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng); };
    const long n = long(cfg.size);
    const long emin = std::max(2L, long(std::lround(cfg.extent_min * n / 2)));
    const long emax = std::max(emin, long(std::lround(cfg.extent_max * n / 2)));
    ShapeParams s{cls, 0, 0, 0, 0, 0, {}};
    s.half_h = pick(emin, emax);
    s.half_w = cls == ShapeClass::rectangle ? pick(emin, emax) : s.half_h;
    s.arm = std::max(1L, s.half_h / 3);
    // one pixel of margin on each side keeps every shape strictly inside
    s.cy = pick(s.half_h + 1, n - 2 - s.half_h);
    s.cx = pick(s.half_w + 1, n - 2 - s.half_w);
    for (std::size_t c = 0; c < cfg.channels; ++c) s.color.push_back(uni(cfg.intensity_min, cfg.intensity_max));
    return s;
}

inline bool shape_covers(const ShapeParams& s, long y, long x) {
    const long dy = y - s.cy, dx = x - s.cx;
    switch (s.cls) {
        case ShapeClass::rectangle: return std::abs(dy) <= s.half_h && std::abs(dx) <= s.half_w;
        case ShapeClass::disk: return dy * dy + dx * dx <= s.half_h * s.half_h;
        case ShapeClass::cross:
            return (std::abs(dy) <= s.half_h && std::abs(dx) <= s.arm) || (std::abs(dx) <= s.half_h && std::abs(dy) <= s.arm);
    }
    return false;
}

/// Render one shape into a C×H×W slot.
inline void render_shape(const ShapesConfig& cfg, const ShapeParams& s, std::span<double> out) {
    const std::size_t n = cfg.size;
    for (std::size_t c = 0; c < cfg.channels; ++c)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x)
                out[(c * n + y) * n + x] = shape_covers(s, long(y), long(x)) ? s.color[c] : 0.0;
}

inline std::uint64_t shape_seed(const ShapesConfig& cfg, std::uint64_t split, std::size_t index) {
    return derive_seed(cfg.seed, {0x5a4e, split, index});
}

inline data::Dataset gen_split(const ShapesConfig& cfg, std::uint64_t split, std::size_t per_class) {
    const std::size_t count = per_class * kNumClasses;
    const std::size_t item = cfg.channels * cfg.size * cfg.size;
    Tensor images({count, cfg.channels, cfg.size, cfg.size});
    std::vector<std::size_t> labels(count);
    for (std::size_t i = 0; i < count; ++i) {
        labels[i] = i % kNumClasses;
        auto s = sample_shape(cfg, ShapeClass(labels[i]), shape_seed(cfg, split, i));
        render_shape(cfg, s, images.data().subspan(i * item, item));
    }
    return {std::move(images), std::move(labels), data::Provenance::real};
}

struct ShapesData {
    data::Dataset train;
    data::Dataset val;
};

/// Class i % 3 at index i; each image drawn from its own derived seed.
inline ShapesData gen_shapes(const ShapesConfig& cfg) {
    cfg.validate();
    ShapesData d;
    d.train = gen_split(cfg, 0, cfg.train_per_class);
    if (cfg.val_per_class > 0) d.val = gen_split(cfg, 1, cfg.val_per_class);
    return d;
}

// ---------------------------------------------------------------------------
// Model specs
// ---------------------------------------------------------------------------

/// Six conv+BN+relu blocks (strides 1,2,1,2,1,2) and a pooled dense head.
inline net::NetworkSpec micro_vgg_spec(std::size_t channels = 1, std::size_t size = 32, std::size_t classes = kNumClasses) {
    using net::LayerSpec;
    const std::size_t widths[6] = {16, 16, 32, 32, 64, 128};
    const std::size_t strides[6] = {1, 2, 1, 2, 1, 2};
    net::NetworkSpec s;
    s.name = "micro_vgg";
    s.input_shape = {channels, size, size};
    std::size_t c = channels;
    for (int i = 0; i < 6; ++i) {
        const std::size_t k = strides[i] == 2 ? 4 : 3;
        s.layers.push_back(LayerSpec::conv(c, widths[i], k, strides[i], 1).bn().act(net::Activation::relu));
        s.block_ends.push_back(s.layers.size());
        c = widths[i];
    }
    s.layers.push_back(LayerSpec::global_avg_pool());
    s.layers.push_back(LayerSpec::dense(c, classes));
    s.block_ends.push_back(s.layers.size());
    net::validate(s);
    return s;
}

/// Dense projection to 128×4×4, three stride-2 transposed-conv blocks and a
/// sigmoid-squashed output conv.
inline net::NetworkSpec micro_gen_spec(std::size_t latent = 32, std::size_t channels = 1) {
    using net::LayerSpec;
    net::NetworkSpec s;
    s.name = "micro_gen";
    s.input_shape = {latent};
    s.layers.push_back(LayerSpec::dense(latent, 128 * 4 * 4).bn().act(net::Activation::relu));
    s.layers.push_back(LayerSpec::reshape({128, 4, 4}));
    s.block_ends.push_back(s.layers.size());
    std::size_t c = 128;
    for (std::size_t o : {64u, 32u, 16u}) {
        s.layers.push_back(LayerSpec::conv_transpose(c, o, 4, 2, 1).bn().act(net::Activation::relu));
        s.block_ends.push_back(s.layers.size());
        c = o;
    }
    s.layers.push_back(LayerSpec::conv(c, channels, 3, 1, 1).act(net::Activation::sigmoid));
    s.block_ends.push_back(s.layers.size());
    net::validate(s);
    return s;
}

/// Small strided conv critic for GAN training.
inline net::NetworkSpec discriminator_spec(std::size_t channels = 1, std::size_t size = 32) {
    using net::LayerSpec;
    net::NetworkSpec s;
    s.name = "critic";
    s.input_shape = {channels, size, size};
    std::size_t c = channels, h = size;
    for (std::size_t o : {16u, 32u, 64u}) {
        s.layers.push_back(LayerSpec::conv(c, o, 4, 2, 1).act(net::Activation::leaky_relu, 0.2));
        c = o;
        h /= 2;
    }
    s.layers.push_back(LayerSpec::flatten());
    s.layers.push_back(LayerSpec::dense(c * h * h, 1));
    s.block_ends = {s.layers.size()};
    net::validate(s);
    return s;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

using LogFn = std::function<void(const std::string& event, const std::vector<std::pair<std::string, double>>& fields)>;

inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits[i * k + j] > logits[i * k + best]) best = j;
        out[i] = best;
    }
    return out;
}

inline std::vector<std::size_t> predict(const net::NetworkSpec& spec, const net::ParamStore& ps, const Tensor& x) {
    return argmax_rows(net::forward_full(spec, ps, x).back());
}

inline double accuracy(const net::NetworkSpec& spec, const net::ParamStore& ps, const Tensor& x,
                       const std::vector<std::size_t>& labels) {
    const auto pred = predict(spec, ps, x);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
    return double(hit) / double(pred.size());
}

struct ClassifierConfig {
    std::size_t epochs = 3;
    std::size_t batch_size = 32;
    double lr = 2e-3;
    std::uint64_t seed = 0;
};

struct ClassifierReport {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_val_accuracy;
    double val_accuracy = 0.0;
};

/// Minibatch indices for one epoch, reshuffled from a derived seed.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, {0xe0, epoch}));
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

/// Cross-entropy training with Adam; running statistics update every step.
inline net::ParamStore train_classifier(const net::NetworkSpec& spec, const ShapesData& data, const ClassifierConfig& cfg,
                                        ClassifierReport* report = nullptr, const LogFn& log = {}) {
    if (cfg.epochs == 0 || cfg.batch_size == 0) throw ConfigError("train_classifier: epochs and batch_size must be >= 1");
    net::ParamStore ps = net::init_params(spec, derive_seed(cfg.seed, {0x1a}));
    const auto names = net::param_names(spec, 0, spec.layers.size());
    const Tensor& images = data.train.images();
    const auto& labels = data.train.labels();
    const std::size_t n = data.train.size();
    opt::AdamState st;
    ClassifierReport rep;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const auto order = epoch_order(n, cfg.seed, e);
        double total = 0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b + cfg.batch_size <= n; b += cfg.batch_size) {
            std::vector<std::size_t> idx(order.begin() + long(b), order.begin() + long(b + cfg.batch_size));
            std::vector<std::size_t> y;
            for (auto i : idx) y.push_back(labels[i]);
            ad::Graph g;
            net::Binding bind(g, ps, [](std::size_t) { return true; });
            net::ForwardContext ctx{&spec, &bind, &ps.running, nullptr, [](std::size_t) { return net::Mode::train; }};
            auto logits = net::forward_blocks(ctx, g.constant(images.gather_rows(idx)), 1, spec.num_blocks());
            auto loss = ad::cross_entropy(logits, y);
            g.backward(loss);
            opt::adam_step(ps.tensors, net::collect_grads(bind, names), st, cfg.lr);
            total += loss.value().item();
            ++batches;
        }
        rep.epoch_loss.push_back(total / double(std::max<std::size_t>(batches, 1)));
        const double acc = data.val.size() > 0 ? accuracy(spec, ps, data.val.images(), data.val.labels()) : 0.0;
        rep.epoch_val_accuracy.push_back(acc);
        if (log) log("classifier_epoch", {{"epoch", double(e)}, {"loss", rep.epoch_loss.back()}, {"val_accuracy", acc}});
    }
    rep.val_accuracy = rep.epoch_val_accuracy.back();
    if (report != nullptr) *report = rep;
    return ps;
}

/// i.i.d. standard normal latent codes [N×d].
inline Tensor sample_latent(std::size_t d, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, {0x1a7e}));
    return Tensor::normal({n, d}, 0.0, 1.0, rng);
}

enum class GeneratorMode { gan, decoder };

inline const char* to_string(GeneratorMode m) { return m == GeneratorMode::gan ? "gan" : "decoder"; }

struct GeneratorConfig {
    GeneratorMode mode = GeneratorMode::decoder;
    std::size_t iters = 1500;
    std::size_t batch_size = 32;
    double lr = 2e-3;       // generator / decoder
    double lr_critic = 2e-4;
    std::uint64_t seed = 0;
    std::size_t collapse_window = 500;
    double collapse_threshold = 1e-3;
};

struct GeneratorReport {
    GeneratorMode mode = GeneratorMode::decoder;
    double final_loss = 0.0;         // decoder L1 or generator loss
    double final_critic_loss = 0.0;  // gan only
    bool collapse_warning = false;
    Tensor codes;                    // decoder mode: fixed latent per training image
};

/// Train a generator either adversarially or as a decoder of fixed random codes.
inline net::ParamStore train_generator(const net::NetworkSpec& spec, const data::Dataset& train, const GeneratorConfig& cfg,
                                       GeneratorReport* report = nullptr, const LogFn& log = {}) {
    if (cfg.iters == 0 || cfg.batch_size == 0) throw ConfigError("train_generator: iters and batch_size must be >= 1");
    const std::size_t d = spec.input_shape.at(0);
    const Shape img_shape = net::output_shape(spec);
    if (img_shape != train.item_shape()) {
        throw DimensionError("train_generator: generator emits " + shape_str(img_shape) + " but data is " +
                             shape_str(train.item_shape()));
    }
    net::ParamStore ps = net::init_params(spec, derive_seed(cfg.seed, {0x9e}));
    const auto names = net::param_names(spec, 0, spec.layers.size());
    const Tensor& images = train.images();
    const std::size_t n = train.size();
    const std::size_t bs = std::min(cfg.batch_size, n);
    auto train_mode = [](std::size_t) { return net::Mode::train; };
    GeneratorReport rep;
    rep.mode = cfg.mode;
    opt::AdamState st;

    if (cfg.mode == GeneratorMode::decoder) {
        rep.codes = sample_latent(d, n, derive_seed(cfg.seed, {0xdc}));
        double ema = -1;
        for (std::size_t it = 0; it < cfg.iters; ++it) {
            std::mt19937_64 rng(derive_seed(cfg.seed, {0xdd, it}));
            std::vector<std::size_t> idx(bs);
            for (auto& i : idx) i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
            ad::Graph g;
            net::Binding bind(g, ps, [](std::size_t) { return true; });
            net::ForwardContext ctx{&spec, &bind, &ps.running, nullptr, train_mode};
            auto out = net::forward_blocks(ctx, g.constant(rep.codes.gather_rows(idx)), 1, spec.num_blocks());
            auto loss = ad::l1_loss(out, g.constant(images.gather_rows(idx)));
            g.backward(loss);
            opt::adam_step(ps.tensors, net::collect_grads(bind, names), st, cfg.lr);
            const double l = loss.value().item();
            ema = ema < 0 ? l : 0.98 * ema + 0.02 * l;
            if (log && (it % 50 == 0 || it + 1 == cfg.iters)) log("decoder_iter", {{"iter", double(it)}, {"l1", l}});
        }
        rep.final_loss = ema;
    } else {
        const auto critic = discriminator_spec(img_shape[0], img_shape[1]);
        net::ParamStore cps = net::init_params(critic, derive_seed(cfg.seed, {0xd1}));
        const auto cnames = net::param_names(critic, 0, critic.layers.size());
        opt::AdamState cst;
        cst.cfg.beta1 = 0.5;
        st.cfg.beta1 = 0.5;
        std::size_t low_run = 0;
        for (std::size_t it = 0; it < cfg.iters; ++it) {
            std::mt19937_64 rng(derive_seed(cfg.seed, {0x9a, it}));
            std::vector<std::size_t> idx(bs);
            for (auto& i : idx) i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
            const Tensor z = Tensor::normal({bs, d}, 0.0, 1.0, rng);

            // critic step: softplus(−D(x)) + softplus(D(G(z)))
            double dl;
            {
                ad::Graph g;
                net::Binding gb(g, ps);
                net::Binding db(g, cps, [](std::size_t) { return true; });
                net::ForwardContext gctx{&spec, &gb, nullptr, &ps.running, train_mode};
                net::ForwardContext dctx{&critic, &db, nullptr, &cps.running};
                auto fake = net::forward_blocks(gctx, g.constant(z), 1, spec.num_blocks());
                auto real_logit = net::forward_blocks(dctx, g.constant(images.gather_rows(idx)), 1, 1);
                auto fake_logit = net::forward_blocks(dctx, g.constant(fake.value()), 1, 1);
                auto loss = ad::add(ad::mean(ad::softplus(ad::scale(real_logit, -1.0))), ad::mean(ad::softplus(fake_logit)));
                g.backward(loss);
                opt::adam_step(cps.tensors, net::collect_grads(db, cnames), cst, cfg.lr_critic);
                dl = loss.value().item();
            }
            // generator step: softplus(−D(G(z)))
            double gl;
            {
                ad::Graph g;
                net::Binding gb(g, ps, [](std::size_t) { return true; });
                net::Binding db(g, cps);
                net::ForwardContext gctx{&spec, &gb, &ps.running, nullptr, train_mode};
                net::ForwardContext dctx{&critic, &db, nullptr, &cps.running};
                auto fake = net::forward_blocks(gctx, g.constant(z), 1, spec.num_blocks());
                auto loss = ad::mean(ad::softplus(ad::scale(net::forward_blocks(dctx, fake, 1, 1), -1.0)));
                g.backward(loss);
                opt::adam_step(ps.tensors, net::collect_grads(gb, names), st, cfg.lr);
                gl = loss.value().item();
            }
            low_run = dl < cfg.collapse_threshold ? low_run + 1 : 0;
            if (low_run >= cfg.collapse_window && !rep.collapse_warning) {
                rep.collapse_warning = true;
                if (log) log("gan_collapse_warning", {{"iter", double(it)}, {"critic_loss", dl}});
            }
            if (log && (it % 50 == 0 || it + 1 == cfg.iters)) log("gan_iter", {{"iter", double(it)}, {"critic", dl}, {"gen", gl}});
            rep.final_loss = gl;
            rep.final_critic_loss = dl;
        }
    }
    if (report != nullptr) *report = std::move(rep);
    return ps;
}

} // namespace zsinv::zoo
