// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "zsinv/dataset.hpp"
#include "zsinv/network.hpp"
#include "zsinv/optimizer.hpp"
#include "zsinv/rng.hpp"

namespace zsinv::synth {

struct SynthesisConfig {
    std::size_t batch_size = 64;
    std::size_t steps = 1000;
    double lr = 0.05;
    double lr_min = 0.0;
    std::size_t restarts = 0;
    double tv_weight = 1e-4;
    double ce_weight = 1.0;
    double bn_weight = 1.0;
    std::size_t set_size = 512;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size == 0 || steps == 0 || set_size == 0) throw ConfigError("synthesis: batch_size, steps, set_size must be >= 1");
        if (tv_weight < 0 || ce_weight < 0 || bn_weight < 0) throw ConfigError("synthesis: loss weights must be >= 0");
        if (!(lr > 0)) throw ConfigError("synthesis: lr must be > 0");
    }
};

struct LossTerms {
    double ce = 0, bn = 0, tv = 0, total = 0;
};

struct SynthesisBatch {
    Tensor x;
    Tensor x_init;
    std::vector<std::size_t> labels;
    LossTerms initial;
    LossTerms final;
    std::size_t batch_index = 0;
};

/// Σ_l ‖μ_l(x) − BN_l(μ)‖₂ + ‖σ²_l(x) − BN_l(σ²)‖₂ over captured BN inputs.
inline ad::Var bn_match_term(const net::ParamStore& params, const std::vector<std::pair<std::size_t, ad::Var>>& captured) {
    if (captured.empty()) throw ConfigError("bn_match_loss: target has no batch-norm layers");
    ad::Graph& g = *captured.front().second.graph;
    ad::Var acc = g.constant(Tensor::scalar(0.0));
    for (const auto& [layer, v] : captured) {
        const auto& rs = params.running.at(net::layer_key(layer));
        const auto st = ad::feature_stats(v);
        acc = ad::add(acc, ad::add(ad::l2_stat_loss(st.mean, g.constant(rs.mean)), ad::l2_stat_loss(st.var, g.constant(rs.var))));
    }
    return acc;
}

/// Eval-mode forward of x recording every BN input; running statistics are
/// only read.
struct CapturedForward {
    ad::Var logits;
    std::vector<std::pair<std::size_t, ad::Var>> bn_inputs;
};

inline CapturedForward capture_forward(const net::NetworkSpec& spec, const net::Binding& bind, const net::ParamStore& params,
                                       ad::Var x) {
    CapturedForward out;
    net::ForwardContext ctx{&spec, &bind, nullptr, &params.running};
    ctx.bn_inputs = &out.bn_inputs;
    out.logits = net::forward_blocks(ctx, x, 1, spec.num_blocks());
    return out;
}

inline double bn_match_loss(const net::NetworkSpec& spec, const net::ParamStore& params, const Tensor& x) {
    net::check_input(spec, spec.input_shape, x, "bn_match_loss");
    ad::Graph g;
    net::Binding bind(g, params);
    auto cap = capture_forward(spec, bind, params, g.constant(x));
    return bn_match_term(params, cap.bn_inputs).value().item();
}

inline void clamp01(Tensor& t) {
    for (double& v : t.data()) v = std::min(1.0, std::max(0.0, v));
}

/// Optimise a batch of pixels from uniform noise towards the stored BN
/// statistics, fixed random labels and a smoothness prior.
inline SynthesisBatch synthesize_batch(const net::NetworkSpec& spec, const net::ParamStore& params, const SynthesisConfig& cfg,
                                       std::size_t batch_index = 0,
                                       const std::function<void(std::size_t, const LossTerms&)>& on_step = {}) {
    cfg.validate();
    const std::size_t classes = net::output_shape(spec).at(0);
    std::mt19937_64 rng(derive_seed(cfg.seed, {0x5e, batch_index}));
    Shape xs{cfg.batch_size};
    xs.insert(xs.end(), spec.input_shape.begin(), spec.input_shape.end());
    SynthesisBatch out;
    out.batch_index = batch_index;
    out.x_init = Tensor::uniform(xs, 0.0, 1.0, rng);
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        out.labels.push_back(std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng));
    }
    const opt::ScheduleConfig sched{cfg.lr, cfg.lr_min, cfg.steps, cfg.restarts};
    std::map<std::string, Tensor> px{{"x", out.x_init}};
    opt::AdamState st;

    auto evaluate = [&](bool step, std::size_t it) {
        ad::Graph g;
        net::Binding bind(g, params);
        ad::Var x = g.leaf(px.at("x"), step);
        auto cap = capture_forward(spec, bind, params, x);
        ad::Var ce = ad::cross_entropy(cap.logits, out.labels);
        ad::Var bn = bn_match_term(params, cap.bn_inputs);
        ad::Var tv = ad::total_variation(x);
        ad::Var total = ad::add(ad::add(ad::scale(ce, cfg.ce_weight), ad::scale(bn, cfg.bn_weight)), ad::scale(tv, cfg.tv_weight));
        LossTerms t{ce.value().item(), bn.value().item(), tv.value().item(), total.value().item()};
        if (step) {
            g.backward(total);
            try {
                opt::adam_step(px, {{"x", g.grad(x)}}, st, opt::lr_at(sched, it));
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (synthesis batch " + std::to_string(batch_index) + ", step " +
                                   std::to_string(it) + ")");
            }
            clamp01(px.at("x"));
        }
        return t;
    };

    out.initial = evaluate(false, 0);
    for (std::size_t it = 0; it < cfg.steps; ++it) {
        LossTerms t = evaluate(true, it);
        if (on_step) on_step(it, t);
    }
    out.x = px.at("x");
    out.final = evaluate(false, 0);
    return out;
}

struct SyntheticSet {
    data::Dataset data;
    std::vector<SynthesisBatch> batches;  // pixel tensors dropped, losses kept
};

/// Batches with derived seeds until cfg.set_size images exist; the last
/// batch is truncated.
inline SyntheticSet build_synthetic_set(const net::NetworkSpec& spec, const net::ParamStore& params, const SynthesisConfig& cfg,
                                        const std::function<void(const SynthesisBatch&)>& on_batch = {}) {
    cfg.validate();
    std::vector<Tensor> parts;
    std::vector<std::size_t> labels;
    SyntheticSet out;
    for (std::size_t b = 0; labels.size() < cfg.set_size; ++b) {
        auto batch = synthesize_batch(spec, params, cfg, b);
        const std::size_t take = std::min(cfg.batch_size, cfg.set_size - labels.size());
        parts.push_back(take == cfg.batch_size ? batch.x : batch.x.slice_rows(0, take));
        labels.insert(labels.end(), batch.labels.begin(), batch.labels.begin() + long(take));
        if (on_batch) on_batch(batch);
        batch.x = Tensor();
        batch.x_init = Tensor();
        out.batches.push_back(std::move(batch));
    }
    out.data = data::Dataset(concat_rows(parts), std::move(labels), data::Provenance::synthetic);
    return out;
}

} // namespace zsinv::synth
