// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "zsinv/dataset.hpp"
#include "zsinv/network.hpp"
#include "zsinv/optimizer.hpp"
#include "zsinv/rng.hpp"

namespace zsinv::dci {

/// A frozen, fully known network to invert.
struct Target {
    const net::NetworkSpec* spec = nullptr;
    const net::ParamStore* params = nullptr;

    std::size_t depth() const { return spec->num_blocks(); }
};

/// Inverse modules mirroring a target's blocks. Module k (1-based, target
/// order) is block L+1−k of the mirrored spec.
struct InversionModel {
    net::NetworkSpec spec;
    net::ParamStore params;
    std::size_t trained_up_to = 0;

    std::size_t depth() const { return spec.num_blocks(); }
    std::size_t inv_block(std::size_t k) const {
        if (k < 1 || k > depth()) throw ConfigError("inverse module " + std::to_string(k) + " outside 1.." + std::to_string(depth()));
        return depth() + 1 - k;
    }
    /// Layer range [begin, end) of module k in the mirrored spec.
    std::pair<std::size_t, std::size_t> module_layers(std::size_t k) const { return spec.block_layers(inv_block(k)); }

    friend bool operator==(const InversionModel&, const InversionModel&) = default;
};

inline InversionModel make_inversion_model(const net::NetworkSpec& target, std::uint64_t seed) {
    InversionModel m;
    m.spec = net::mirror_spec(target);
    m.params = net::init_params(m.spec, derive_seed(seed, {0x1b}));
    return m;
}

struct DciConfig {
    std::optional<double> alpha;  // unset: α·L_cyc = alpha_ratio·L_img on a stage's first batch
    double alpha_ratio = 1.0;
    std::size_t iters_per_module = 1500;
    std::size_t iters_finetune = 1500;
    double lr_module = 1e-3;
    double lr_finetune = 1e-4;
    double lr_min_ratio = 0.01;  // lr_min = ratio · lr_max
    std::size_t restarts = 3;
    std::size_t batch_size = 32;
    std::size_t log_every = 50;
    std::uint64_t seed = 0;

    void validate() const {
        if (iters_per_module == 0) throw ConfigError("dci: iters_per_module must be >= 1");
        if (batch_size == 0) throw ConfigError("dci: batch_size must be >= 1");
        if (alpha && !(*alpha >= 0.0)) throw ConfigError("dci: alpha must be >= 0");
        if (!(alpha_ratio >= 0.0) || !std::isfinite(alpha_ratio)) throw ConfigError("dci: alpha_ratio must be finite and >= 0");
        if (!(lr_module > 0 && lr_finetune > 0)) throw ConfigError("dci: learning rates must be > 0");
        if (!(lr_min_ratio >= 0 && lr_min_ratio <= 1)) throw ConfigError("dci: lr_min_ratio must lie in [0,1]");
        if (iters_per_module < restarts + 1 || (iters_finetune > 0 && iters_finetune < restarts + 1)) {
            throw ConfigError("dci: each phase needs at least restarts+1 iterations");
        }
    }
};

enum class Phase { module = 0, finetune = 1, end_to_end = 2 };

inline const char* to_string(Phase p) {
    switch (p) {
        case Phase::module: return "module";
        case Phase::finetune: return "finetune";
        case Phase::end_to_end: return "end_to_end";
    }
    return "?";
}

struct LossBreakdown {
    double layer = 0, img = 0, cyc = 0, total = 0, alpha = 0;
    std::size_t stage = 0;
    std::size_t iter = 0;
    Phase phase = Phase::module;
};

/// L_total = L_layer + L_img + α·L_cyc.
inline LossBreakdown loss_total(double layer, double img, double cyc, double alpha) {
    if (layer < 0 || img < 0 || cyc < 0) throw NumericError("loss_total: negative component");
    if (alpha < 0) throw ConfigError("loss_total: alpha must be >= 0");
    LossBreakdown b;
    b.layer = layer;
    b.img = img;
    b.cyc = cyc;
    b.alpha = alpha;
    b.total = layer + img + alpha * cyc;
    return b;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Where training inputs come from: a fixed image set (classifier targets)
/// or fresh standard-normal latents per batch (generator targets).
struct DataSource {
    const data::Dataset* images = nullptr;
    bool latent = false;

    static DataSource from_images(const data::Dataset& d) { return {&d, false}; }
    static DataSource from_latents() { return {nullptr, true}; }
};

/// Target trace of every training input, computed once.
class TraceCache {
public:
    TraceCache(const Target& t, const DataSource& src) : target_(t), src_(src) {
        if (!src.latent) {
            if (src.images == nullptr || src.images->size() == 0) throw ConfigError("dci: empty image source");
            trace_ = net::forward_full(*t.spec, *t.params, src.images->images());
        }
    }

    /// Trace rows for one minibatch drawn from `rng`.
    net::ActivationTrace batch(std::size_t n, std::mt19937_64& rng) const {
        if (src_.latent) {
            Tensor z = Tensor::normal({n, target_.spec->input_shape.at(0)}, 0.0, 1.0, rng);
            return net::forward_full(*target_.spec, *target_.params, z);
        }
        const std::size_t total = trace_[0].dim(0);
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
        net::ActivationTrace out;
        for (const auto& t : trace_) out.push_back(t.gather_rows(idx));
        return out;
    }

private:
    Target target_;
    DataSource src_;
    net::ActivationTrace trace_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Apply inverse modules k..1 (target numbering) to an embedding on a graph.
inline ad::Var inverse_forward(const net::ForwardContext& ctx, const InversionModel& inv, ad::Var emb, std::size_t from_k,
                               std::size_t to_k = 1) {
    return net::forward_blocks(ctx, emb, inv.inv_block(from_k), inv.inv_block(to_k));
}

/// Σ_l mean|F_{1:l}(x) − F_{1:l}(x′)| over all target blocks, on a graph.
inline ad::Var cycle_term(const Target& t, const net::Binding& tb, const net::ActivationTrace& ref, ad::Var xp) {
    ad::Graph& g = *xp.graph;
    net::ForwardContext ctx{t.spec, &tb, nullptr, &t.params->running};
    auto tr = net::forward_trace(ctx, xp);
    ad::Var acc = g.constant(Tensor::scalar(0.0));
    for (std::size_t l = 1; l < tr.size(); ++l) acc = ad::add(acc, ad::l1_loss(tr[l], g.constant(ref[l])));
    return acc;
}

inline double loss_img(const Tensor& x, const Tensor& xp) {
    if (x.shape() != xp.shape()) throw DimensionError("loss_img: " + shape_str(x.shape()) + " vs " + shape_str(xp.shape()));
    ad::Graph g;
    return ad::l1_loss(g.constant(x), g.constant(xp)).value().item();
}

inline double loss_cyc(const Target& t, const Tensor& x, const Tensor& xp) {
    if (x.shape() != xp.shape()) throw DimensionError("loss_cyc: " + shape_str(x.shape()) + " vs " + shape_str(xp.shape()));
    auto a = net::forward_full(*t.spec, *t.params, x);
    auto b = net::forward_full(*t.spec, *t.params, xp);
    double s = 0;
    for (std::size_t l = 1; l < a.size(); ++l) s += loss_img(a[l], b[l]);
    return s;
}

/// mean|u_k − F_k⁻¹(F_k(u_k))| with u_k = F_{1:k−1}(x), everything in eval mode.
inline double loss_layer(const Target& t, const InversionModel& inv, const Tensor& x, std::size_t k) {
    auto tr = net::forward_full(*t.spec, *t.params, x);
    if (k < 1 || k >= tr.size()) throw ConfigError("loss_layer: block " + std::to_string(k) + " out of range");
    const std::size_t b = inv.inv_block(k);
    return loss_img(tr[k - 1], net::forward_sub(inv.spec, inv.params, tr[k], b, b));
}

/// F⁻¹_{1:k}(embedding) in eval mode, clamped for image-space targets.
inline Tensor invert(const InversionModel& inv, const Tensor& embedding, std::size_t from_k) {
    if (from_k < 1 || from_k > inv.depth()) throw ConfigError("invert: depth " + std::to_string(from_k) + " out of range");
    if (from_k > inv.trained_up_to) {
        throw ConfigError("invert: model trained up to block " + std::to_string(inv.trained_up_to) + ", requested " +
                          std::to_string(from_k));
    }
    Tensor out = net::forward_sub(inv.spec, inv.params, embedding, inv.inv_block(from_k), inv.depth());
    if (inv.spec.clamp_output) {
        for (double& v : out.data()) v = std::min(1.0, std::max(0.0, v));
    }
    return out;
}

/// Mean losses of stage k over a held-out input set, eval mode throughout.
inline LossBreakdown evaluate(const Target& t, const InversionModel& inv, const Tensor& x, std::size_t k, double alpha) {
    auto tr = net::forward_full(*t.spec, *t.params, x);
    const std::size_t b = inv.inv_block(k);
    Tensor yk = net::forward_sub(inv.spec, inv.params, tr[k], b, b);
    const double layer = loss_img(tr[k - 1], yk);
    Tensor xp = k == 1 ? yk : net::forward_sub(inv.spec, inv.params, yk, b + 1, inv.depth());
    const double img = loss_img(x, xp);
    auto trp = net::forward_full(*t.spec, *t.params, xp);
    double cyc = 0;
    for (std::size_t l = 1; l < tr.size(); ++l) cyc += loss_img(tr[l], trp[l]);
    auto r = loss_total(layer, img, cyc, alpha);
    r.stage = k;
    return r;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StageLog {
    std::size_t stage = 0;
    double alpha = 0;
    std::vector<LossBreakdown> records;
    std::size_t iterations = 0;
};

using LossLogFn = std::function<void(const LossBreakdown&)>;

struct PhaseSpec {
    Phase phase;
    std::size_t k;            // stage: deepest module involved
    std::size_t first_train;  // shallowest trainable module
    std::size_t iters;
    double lr;
};

/// One optimisation phase over modules first_train..k on L_k. Modules
/// below first_train run frozen in eval mode; trainable ones use batch
/// statistics and update their running averages.
inline void run_phase(const Target& t, InversionModel& inv, const TraceCache& cache, const DciConfig& cfg, const PhaseSpec& ps,
                      StageLog& log, const LossLogFn& on_log, bool end_to_end = false) {
    const std::size_t k = ps.k;
    // modules first_train..k occupy one contiguous layer range of the mirror
    const std::size_t train_begin = inv.module_layers(k).first;
    const std::size_t train_end = inv.module_layers(ps.first_train).second;
    const auto names = net::param_names(inv.spec, train_begin, train_end);
    auto trainable = [=](std::size_t layer) { return layer >= train_begin && layer < train_end; };
    auto mode = [=](std::size_t layer) { return trainable(layer) ? net::Mode::train : net::Mode::eval; };
    const opt::ScheduleConfig sched{ps.lr, ps.lr * cfg.lr_min_ratio, ps.iters, cfg.restarts};
    opt::AdamState st;

    for (std::size_t it = 0; it < ps.iters; ++it) {
        std::mt19937_64 rng(derive_seed(cfg.seed, {0xdc1, k, std::uint64_t(ps.phase), it}));
        const auto batch = cache.batch(cfg.batch_size, rng);
        ad::Graph g;
        net::Binding ib(g, inv.params, trainable);
        net::Binding tbind(g, *t.params);
        net::ForwardContext ictx{&inv.spec, &ib, &inv.params.running, nullptr, mode};
        const std::size_t b = inv.inv_block(k);
        ad::Var yk = net::forward_blocks(ictx, g.constant(batch[k]), b, b);
        ad::Var layer = ad::l1_loss(yk, g.constant(batch[k - 1]));
        ad::Var xp = k == 1 ? yk : net::forward_blocks(ictx, yk, b + 1, inv.depth());
        ad::Var img = ad::l1_loss(xp, g.constant(batch[0]));
        ad::Var cyc = cycle_term(t, tbind, batch, xp);

        if (it == 0 && ps.phase != Phase::finetune) {
            log.alpha = cfg.alpha ? *cfg.alpha : (cyc.value().item() > 0 ? cfg.alpha_ratio * img.value().item() / cyc.value().item() : 0.0);
        }
        ad::Var total = ad::add(img, ad::scale(cyc, log.alpha));
        if (!end_to_end) total = ad::add(layer, total);
        g.backward(total);
        try {
            opt::adam_step(inv.params.tensors, net::collect_grads(ib, names), st, opt::lr_at(sched, it));
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (stage " + std::to_string(k) + ", " + to_string(ps.phase) + " iter " +
                               std::to_string(it) + ")");
        }
        ++log.iterations;
        if (it % cfg.log_every == 0 || it + 1 == ps.iters) {
            auto r = loss_total(end_to_end ? 0.0 : layer.value().item(), img.value().item(), cyc.value().item(), log.alpha);
            r.stage = k;
            r.iter = it;
            r.phase = ps.phase;
            log.records.push_back(r);
            if (on_log) on_log(r);
        }
    }
}

/// Optimise only module k on L_k; modules < k stay frozen.
inline void train_module_k(const Target& t, InversionModel& inv, std::size_t k, const TraceCache& cache, const DciConfig& cfg,
                           StageLog& log, const LossLogFn& on_log = {}) {
    cfg.validate();
    if (k < 1 || k > inv.trained_up_to + 1) {
        throw ConfigError("train_module_k: module " + std::to_string(k) + " needs modules 1.." + std::to_string(k - 1) +
                          " trained first (have " + std::to_string(inv.trained_up_to) + ")");
    }
    log.stage = k;
    run_phase(t, inv, cache, cfg, {Phase::module, k, k, cfg.iters_per_module, cfg.lr_module}, log, on_log);
    inv.trained_up_to = std::max(inv.trained_up_to, k);
}

/// Jointly optimise modules 1..k on L_k; skipped at k = 1.
inline void finetune_up_to_k(const Target& t, InversionModel& inv, std::size_t k, const TraceCache& cache, const DciConfig& cfg,
                             StageLog& log, const LossLogFn& on_log = {}) {
    cfg.validate();
    if (k > inv.trained_up_to) throw ConfigError("finetune_up_to_k: module " + std::to_string(k) + " not trained yet");
    if (k <= 1 || cfg.iters_finetune == 0) return;
    run_phase(t, inv, cache, cfg, {Phase::finetune, k, 1, cfg.iters_finetune, cfg.lr_finetune}, log, on_log);
}

struct DciResult {
    InversionModel model;
    std::vector<StageLog> stages;
};

/// Progressive inversion: for k = 1..up_to train module k, then fine-tune
/// modules 1..k. `resume` continues from a stage checkpoint; the result is
/// bit-identical to an uninterrupted run because every minibatch and
/// optimiser state derives from (seed, stage, phase).
inline DciResult run_dci(const Target& t, const DataSource& src, const DciConfig& cfg, std::size_t up_to,
                         const std::optional<DciResult>& resume = std::nullopt,
                         const std::function<void(const DciResult&)>& on_stage = {}, const LossLogFn& on_log = {}) {
    cfg.validate();
    if (up_to < 1 || up_to > t.depth()) throw ConfigError("run_dci: up_to must lie in 1.." + std::to_string(t.depth()));
    DciResult res = resume ? *resume : DciResult{make_inversion_model(*t.spec, cfg.seed), {}};
    if (res.model.depth() != t.depth()) throw ConfigError("run_dci: resumed model does not mirror this target");
    if (res.stages.size() != res.model.trained_up_to) throw ConfigError("run_dci: resumed stage log is inconsistent");
    TraceCache cache(t, src);
    for (std::size_t k = res.model.trained_up_to + 1; k <= up_to; ++k) {
        StageLog log;
        train_module_k(t, res.model, k, cache, cfg, log, on_log);
        finetune_up_to_k(t, res.model, k, cache, cfg, log, on_log);
        res.stages.push_back(std::move(log));
        if (on_stage) on_stage(res);
    }
    return res;
}

/// Total optimisation steps of run_dci(up_to = k).
inline std::size_t dci_budget(const DciConfig& cfg, std::size_t k) {
    return k * cfg.iters_per_module + (k > 1 ? (k - 1) * cfg.iters_finetune : 0);
}

/// The mirrored architecture trained jointly from scratch on L_img + α·L_cyc
/// with the same number of steps as run_dci(up_to = k).
inline DciResult train_end_to_end_baseline(const Target& t, const DataSource& src, const DciConfig& cfg, std::size_t k,
                                           const LossLogFn& on_log = {}) {
    cfg.validate();
    if (k < 1 || k > t.depth()) throw ConfigError("end-to-end: depth out of range");
    DciResult res{make_inversion_model(*t.spec, cfg.seed), {}};
    TraceCache cache(t, src);
    StageLog log;
    log.stage = k;
    run_phase(t, res.model, cache, cfg, {Phase::end_to_end, k, 1, dci_budget(cfg, k), cfg.lr_module}, log, on_log, true);
    res.model.trained_up_to = k;
    res.stages.push_back(std::move(log));
    return res;
}

} // namespace zsinv::dci
