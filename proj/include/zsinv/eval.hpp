// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "zsinv/dci.hpp"
#include "zsinv/parallel.hpp"
#include "zsinv/rng.hpp"

namespace zsinv::eval {

inline constexpr double kPsnrCap = 99.0;
inline constexpr const char* kPerceptualNote =
    "cycle_distance (normalised per-block feature L1 through the target) stands in for LPIPS";

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// 10·log10(max²/MSE), clamped to [0, 99] dB.
inline double psnr(const Tensor& x, const Tensor& xp, double max_val = 1.0) {
    if (x.shape() != xp.shape()) throw DimensionError("psnr: " + shape_str(x.shape()) + " vs " + shape_str(xp.shape()));
    double se = 0;
    for (std::size_t i = 0; i < x.size(); ++i) se += (x[i] - xp[i]) * (x[i] - xp[i]);
    const double mse = se / double(x.size());
    if (mse == 0.0) return kPsnrCap;
    return std::clamp(10.0 * std::log10(max_val * max_val / mse), 0.0, kPsnrCap);
}

inline std::vector<double> psnr_per_item(const Tensor& x, const Tensor& xp, double max_val = 1.0) {
    if (x.shape() != xp.shape()) throw DimensionError("psnr_per_item: shape mismatch");
    const std::size_t n = x.dim(0);
    return parallel_map<double>(n, [&](std::size_t i) { return psnr(x.slice_rows(i, i + 1), xp.slice_rows(i, i + 1), max_val); });
}

/// Σ_l mean|F_{1:l}(x) − F_{1:l}(x′)| / Σ_l mean|F_{1:l}(x)|.
inline double cycle_distance(const dci::Target& t, const Tensor& x, const Tensor& xp) {
    auto a = net::forward_full(*t.spec, *t.params, x);
    auto b = net::forward_full(*t.spec, *t.params, xp);
    double num = 0, den = 0;
    for (std::size_t l = 1; l < a.size(); ++l) {
        num += dci::loss_img(a[l], b[l]);
        double s = 0;
        for (double v : a[l].data()) s += std::abs(v);
        den += s / double(a[l].size());
    }
    if (den == 0.0) throw NumericError("cycle_distance: reference trace is identically zero");
    return num / den;
}

inline std::vector<double> cycle_distance_per_item(const dci::Target& t, const Tensor& x, const Tensor& xp) {
    if (x.shape() != xp.shape()) throw DimensionError("cycle_distance: shape mismatch");
    return parallel_map<double>(x.dim(0), [&](std::size_t i) {
        return cycle_distance(t, x.slice_rows(i, i + 1), xp.slice_rows(i, i + 1));
    });
}

struct Summary {
    double mean = 0, std = 0;
};

inline Summary summarize(const std::vector<double>& v) {
    Summary s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= double(v.size());
    for (double x : v) s.std += (x - s.mean) * (x - s.mean);
    s.std = v.size() > 1 ? std::sqrt(s.std / double(v.size() - 1)) : 0.0;
    return s;
}

struct MetricsReport {
    std::vector<double> psnr;
    std::vector<double> cycle;
    Summary psnr_summary, cycle_summary;
    std::string note = kPerceptualNote;
};

inline MetricsReport metrics(const dci::Target& t, const Tensor& x, const Tensor& xp) {
    MetricsReport r;
    r.psnr = psnr_per_item(x, xp);
    r.cycle = cycle_distance_per_item(t, x, xp);
    r.psnr_summary = summarize(r.psnr);
    r.cycle_summary = summarize(r.cycle);
    return r;
}

/// Exact sign test on paired differences; zeros are dropped.
struct SignTest {
    std::size_t positive = 0, negative = 0;
    double p_greater = 1.0;    // H1: differences tend to be positive
    double p_two_sided = 1.0;
};

inline double binom_upper_tail(std::size_t n, std::size_t k) {
    // P(X >= k), X ~ Bin(n, 1/2), summed in log space
    double p = 0;
    for (std::size_t i = k; i <= n; ++i) {
        p += std::exp(std::lgamma(double(n) + 1) - std::lgamma(double(i) + 1) - std::lgamma(double(n - i) + 1) - double(n) * std::log(2.0));
    }
    return std::min(1.0, p);
}

inline SignTest sign_test(const std::vector<double>& diffs) {
    SignTest s;
    for (double d : diffs) {
        if (d > 0) ++s.positive;
        else if (d < 0) ++s.negative;
    }
    const std::size_t n = s.positive + s.negative;
    if (n == 0) return s;
    s.p_greater = binom_upper_tail(n, s.positive);
    s.p_two_sided = std::min(1.0, 2.0 * binom_upper_tail(n, std::max(s.positive, s.negative)));
    return s;
}

// ---------------------------------------------------------------------------
// Perturbations
// ---------------------------------------------------------------------------

struct AttackConfig {
    double eps = 8.0 / 255.0;
    double step = 2.0 / 255.0;
    std::size_t steps = 20;
    std::uint64_t seed = 0;

    void validate() const {
        if (eps < 0) throw ConfigError("attack: eps must be >= 0");
        if (steps == 0) throw ConfigError("attack: steps must be >= 1");
        if (eps > 0 && !(step > 0 && step <= eps)) throw ConfigError("attack: need 0 < step <= eps");
    }
};

inline void require_classifier(const dci::Target& t) {
    const Shape out = net::output_shape(*t.spec);
    if (out.size() != 1 || out[0] < 2 || t.spec->input_shape.size() != 3) {
        throw ConfigError("attack: target " + t.spec->name + " is not an image classifier");
    }
}

/// L∞ PGD on cross-entropy with a uniform random start inside the ball.
inline Tensor pgd_attack(const dci::Target& t, const Tensor& x, const std::vector<std::size_t>& labels, const AttackConfig& cfg) {
    require_classifier(t);
    cfg.validate();
    if (cfg.eps == 0.0) return x;
    std::mt19937_64 rng(derive_seed(cfg.seed, {0xa7}));
    Tensor adv = x;
    std::uniform_real_distribution<double> u(-cfg.eps, cfg.eps);
    for (double& v : adv.data()) v = std::clamp(v + u(rng), 0.0, 1.0);
    for (std::size_t it = 0; it < cfg.steps; ++it) {
        ad::Graph g;
        net::Binding b(g, *t.params);
        net::ForwardContext ctx{t.spec, &b, nullptr, &t.params->running};
        ad::Var xv = g.leaf(adv);
        ad::Var loss = ad::cross_entropy(net::forward_blocks(ctx, xv, 1, t.depth()), labels);
        g.backward(loss);
        const Tensor grad = g.grad(xv);
        for (std::size_t i = 0; i < adv.size(); ++i) {
            const double s = grad[i] > 0 ? 1.0 : (grad[i] < 0 ? -1.0 : 0.0);
            const double v = std::clamp(adv[i] + cfg.step * s, x[i] - cfg.eps, x[i] + cfg.eps);
            adv[i] = std::clamp(v, 0.0, 1.0);
        }
    }
    return adv;
}

/// Gaussian noise scaled per image to L∞ norm ε, then clamped to [0,1].
inline Tensor random_perturb(const Tensor& x, double eps, std::uint64_t seed) {
    if (eps < 0) throw ConfigError("random_perturb: eps must be >= 0");
    if (eps == 0.0) return x;
    std::mt19937_64 rng(derive_seed(seed, {0x7a}));
    Tensor out = x;
    const std::size_t n = x.dim(0), item = x.size() / n;
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> noise(item);
    for (std::size_t i = 0; i < n; ++i) {
        double m = 0;
        for (auto& v : noise) {
            v = nd(rng);
            m = std::max(m, std::abs(v));
        }
        for (std::size_t j = 0; j < item; ++j) out[i * item + j] = std::clamp(x[i * item + j] + eps * noise[j] / m, 0.0, 1.0);
    }
    return out;
}

inline double linf(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

// ---------------------------------------------------------------------------
// Depth sweep and adversarial gap
// ---------------------------------------------------------------------------

struct DepthRow {
    std::size_t depth;
    MetricsReport report;
};

/// Invert the test set from each requested depth.
inline std::vector<DepthRow> depth_sweep(const dci::Target& t, const std::vector<std::pair<std::size_t, const dci::InversionModel*>>& models,
                                         const Tensor& test) {
    std::vector<DepthRow> rows;
    auto tr = net::forward_full(*t.spec, *t.params, test);
    std::size_t prev = 0;
    for (const auto& [k, inv] : models) {
        if (k <= prev) throw ConfigError("depth_sweep: depths must be strictly increasing");
        if (inv == nullptr || inv->trained_up_to < k) throw ConfigError("depth_sweep: no model trained to depth " + std::to_string(k));
        prev = k;
        rows.push_back({k, metrics(t, test, dci::invert(*inv, tr[k], k))});
    }
    return rows;
}

struct GapReport {
    double eps = 0;
    std::size_t depth = 0;
    MetricsReport random, adversarial;
    std::vector<double> psnr_clean_random, psnr_clean_adversarial;  // against the unperturbed image
    SignTest test;  // differences random − adversarial
    double ce_clean = 0, ce_random = 0, ce_adversarial = 0;
};

inline double mean_ce(const dci::Target& t, const Tensor& x, const std::vector<std::size_t>& labels) {
    ad::Graph g;
    net::Binding b(g, *t.params);
    net::ForwardContext ctx{t.spec, &b, nullptr, &t.params->running};
    return ad::cross_entropy(net::forward_blocks(ctx, g.constant(x), 1, t.depth()), labels).value().item();
}

/// Invert features of random and PGD perturbations of identical L∞ size.
/// PSNR compares each inversion against the perturbed image it came from.
inline GapReport adversarial_gap(const dci::Target& t, const dci::InversionModel& inv, const Tensor& x,
                                 const std::vector<std::size_t>& labels, std::size_t depth, const AttackConfig& cfg) {
    GapReport r;
    r.eps = cfg.eps;
    r.depth = depth;
    const Tensor adv = pgd_attack(t, x, labels, cfg);
    const Tensor rnd = random_perturb(x, cfg.eps, cfg.seed);
    if (linf(adv, x) > cfg.eps + 1e-12 || linf(rnd, x) > cfg.eps + 1e-12) throw NumericError("adversarial_gap: budget violated");
    auto inv_of = [&](const Tensor& in) { return dci::invert(inv, net::forward_full(*t.spec, *t.params, in)[depth], depth); };
    const Tensor xr = inv_of(rnd), xa = inv_of(adv);
    r.random = metrics(t, rnd, xr);
    r.adversarial = metrics(t, adv, xa);
    r.psnr_clean_random = psnr_per_item(x, xr);
    r.psnr_clean_adversarial = psnr_per_item(x, xa);
    std::vector<double> d(r.random.psnr.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = r.random.psnr[i] - r.adversarial.psnr[i];
    r.test = sign_test(d);
    r.ce_clean = mean_ce(t, x, labels);
    r.ce_random = mean_ce(t, rnd, labels);
    r.ce_adversarial = mean_ce(t, adv, labels);
    return r;
}

// ---------------------------------------------------------------------------
// Generator-side evaluation
// ---------------------------------------------------------------------------

inline Tensor generate(const dci::Target& gen, const Tensor& z) { return net::forward_full(*gen.spec, *gen.params, z).back(); }

inline double mean_l1(const Tensor& a, const Tensor& b) { return dci::loss_img(a, b); }

struct LatentRecovery {
    double image_l1 = 0;   // mean |G(ẑ) − G(z)|
    double latent_l1 = 0;  // mean |ẑ − z|
    Tensor z, z_hat;
};

inline LatentRecovery latent_recover_eval(const dci::Target& gen, const dci::InversionModel& inv, std::size_t n, std::uint64_t seed) {
    LatentRecovery r;
    std::mt19937_64 rng(derive_seed(seed, {0x1a7}));
    r.z = Tensor::normal({n, gen.spec->input_shape.at(0)}, 0.0, 1.0, rng);
    const Tensor x = generate(gen, r.z);
    r.z_hat = dci::invert(inv, x, gen.depth());
    r.image_l1 = mean_l1(generate(gen, r.z_hat), x);
    r.latent_l1 = mean_l1(r.z_hat, r.z);
    return r;
}

/// G((1−t)ẑ₁ + tẑ₂) for `steps` values of t evenly spaced on [0,1].
inline std::vector<Tensor> interpolate_latents(const dci::Target& gen, const dci::InversionModel& inv, const Tensor& x1,
                                               const Tensor& x2, std::size_t steps) {
    if (steps < 2) throw ConfigError("interpolate_latents: need at least 2 steps");
    const Tensor z1 = dci::invert(inv, x1, gen.depth()), z2 = dci::invert(inv, x2, gen.depth());
    if (z1.shape() != z2.shape()) throw DimensionError("interpolate_latents: endpoint batch sizes differ");
    std::vector<Tensor> out;
    for (std::size_t s = 0; s < steps; ++s) {
        const double tt = double(s) / double(steps - 1);
        Tensor z(z1.shape());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = (1.0 - tt) * z1[i] + tt * z2[i];
        out.push_back(generate(gen, z));
    }
    return out;
}

struct Reprojection {
    Tensor x2;          // G(G⁻¹(G(z)))
    Tensor z_hat;
    Summary z_norm, z_hat_norm;
};

inline std::vector<double> row_norms(const Tensor& z) {
    const std::size_t n = z.dim(0), d = z.size() / n;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += z[i * d + j] * z[i * d + j];
        out[i] = std::sqrt(s);
    }
    return out;
}

inline Reprojection reproject(const dci::Target& gen, const dci::InversionModel& inv, const Tensor& z) {
    Reprojection r;
    r.z_hat = dci::invert(inv, generate(gen, z), gen.depth());
    r.x2 = generate(gen, r.z_hat);
    r.z_norm = summarize(row_norms(z));
    r.z_hat_norm = summarize(row_norms(r.z_hat));
    return r;
}

struct RealVsGenerated {
    std::vector<double> generated_l1, real_l1;  // per image |x − G(G⁻¹(x))|
    Summary generated, real;
    SignTest test;  // differences real − generated
};

/// Both groups go through the same invert-then-regenerate pipeline.
inline RealVsGenerated real_vs_generated_eval(const dci::Target& gen, const dci::InversionModel& inv, const Tensor& real_images,
                                              std::size_t n, std::uint64_t seed) {
    if (real_images.dim(0) < n) throw ConfigError("real_vs_generated_eval: fewer real images than N");
    std::mt19937_64 rng(derive_seed(seed, {0x7e}));
    const Tensor fake = generate(gen, Tensor::normal({n, gen.spec->input_shape.at(0)}, 0.0, 1.0, rng));
    const Tensor real = real_images.slice_rows(0, n);
    auto pipeline = [&](const Tensor& x) {
        const Tensor back = generate(gen, dci::invert(inv, x, gen.depth()));
        return parallel_map<double>(n, [&](std::size_t i) { return mean_l1(x.slice_rows(i, i + 1), back.slice_rows(i, i + 1)); });
    };
    RealVsGenerated r;
    r.generated_l1 = pipeline(fake);
    r.real_l1 = pipeline(real);
    if (r.generated_l1.size() != r.real_l1.size()) throw NumericError("real_vs_generated_eval: unequal groups");
    r.generated = summarize(r.generated_l1);
    r.real = summarize(r.real_l1);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = r.real_l1[i] - r.generated_l1[i];
    r.test = sign_test(d);
    return r;
}

// ---------------------------------------------------------------------------
// Input-optimisation baseline
// ---------------------------------------------------------------------------

struct InputOptConfig {
    std::size_t steps = 2000;
    double lr = 0.05;
    double tv_weight = 1e-4;
    std::uint64_t seed = 0;
};

struct InputOptResult {
    Tensor x;
    double best_loss = 0;
    std::size_t best_step = 0;
    double seconds = 0;
};

/// Optimise pixels so that F_{1:k}(x′) matches the embedding in mean squared
/// error plus λ·TV; returns the lowest-loss iterate.
inline InputOptResult input_opt_invert(const dci::Target& t, const Tensor& embedding, std::size_t k, const InputOptConfig& cfg) {
    require_classifier(t);
    if (k < 1 || k > t.depth()) throw ConfigError("input_opt_invert: depth out of range");
    net::check_input(*t.spec, net::block_output_shape(*t.spec, k), embedding, "input_opt_invert");
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(derive_seed(cfg.seed, {0x10}));
    Shape xs{embedding.dim(0)};
    xs.insert(xs.end(), t.spec->input_shape.begin(), t.spec->input_shape.end());
    std::map<std::string, Tensor> px{{"x", Tensor::uniform(xs, 0.0, 1.0, rng)}};
    InputOptResult r;
    r.x = px.at("x");
    r.best_loss = std::numeric_limits<double>::infinity();
    opt::AdamState st;
    for (std::size_t it = 0; it <= cfg.steps; ++it) {
        ad::Graph g;
        net::Binding b(g, *t.params);
        net::ForwardContext ctx{t.spec, &b, nullptr, &t.params->running};
        ad::Var xv = g.leaf(px.at("x"), it < cfg.steps);
        ad::Var loss = ad::add(ad::mse_loss(net::forward_blocks(ctx, xv, 1, k), g.constant(embedding)),
                               ad::scale(ad::total_variation(xv), cfg.tv_weight));
        const double l = loss.value().item();
        if (l < r.best_loss) {
            r.best_loss = l;
            r.best_step = it;
            r.x = px.at("x");
        }
        if (it == cfg.steps) break;
        g.backward(loss);
        try {
            opt::adam_step(px, {{"x", g.grad(xv)}}, st, cfg.lr);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (input optimisation step " + std::to_string(it) + ")");
        }
        for (double& v : px.at("x").data()) v = std::clamp(v, 0.0, 1.0);
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

} // namespace zsinv::eval
