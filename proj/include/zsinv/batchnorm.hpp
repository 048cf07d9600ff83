// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "zsinv/autodiff.hpp"

namespace zsinv::ad {

/// Per-channel moving averages kept by a batch-norm layer.
struct RunningStats {
    Tensor mean;
    Tensor var;

    static RunningStats fresh(std::size_t channels) {
        return {Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
    }

    friend bool operator==(const RunningStats&, const RunningStats&) = default;
};

enum class BatchNormMode { train, eval };

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.1;
};

namespace detail {

/// View x as [N×C×S]: rank-4 tensors use S = H·W, rank-2 tensors S = 1.
struct ChannelLayout {
    std::size_t n, c, s;

    explicit ChannelLayout(const Tensor& x, const char* op) {
        if (x.rank() == 4) {
            n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
        } else if (x.rank() == 2) {
            n = x.dim(0), c = x.dim(1), s = 1;
        } else {
            throw DimensionError(std::string(op) + " expects N×C×H×W or N×C, got " + shape_str(x.shape()));
        }
    }

    std::size_t count() const { return n * s; }
    std::size_t at(std::size_t i, std::size_t ch, std::size_t p) const { return (i * c + ch) * s + p; }
};

/// Biased per-channel mean and variance, computed in two passes.
inline std::pair<std::vector<double>, std::vector<double>> channel_moments(const Tensor& x, const ChannelLayout& L) {
    std::vector<double> mu(L.c, 0.0), var(L.c, 0.0);
    const double inv = 1.0 / static_cast<double>(L.count());
    for (std::size_t ch = 0; ch < L.c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < L.n; ++i) {
            for (std::size_t p = 0; p < L.s; ++p) acc += x[L.at(i, ch, p)];
        }
        mu[ch] = acc * inv;
        double sq = 0.0;
        for (std::size_t i = 0; i < L.n; ++i) {
            for (std::size_t p = 0; p < L.s; ++p) {
                const double d = x[L.at(i, ch, p)] - mu[ch];
                sq += d * d;
            }
        }
        var[ch] = sq * inv;
    }
    return {std::move(mu), std::move(var)};
}

} // namespace detail

/// Batch normalisation over the channel axis of [N×C×H×W] (or [N×C]).
///
/// Train mode normalises with the batch mean and biased variance and, when
/// `running` is non-null, folds them into the moving averages as
/// (1 − momentum)·old + momentum·batch. Eval mode normalises with `running`
/// (which must then be non-null) and never modifies it.
inline Var batchnorm2d(Var x, Var gamma, Var beta, BatchNormMode mode, RunningStats* running,
                       const BatchNormOptions& opt = {}) {
    detail::same_graph(x, gamma, "batchnorm2d");
    detail::same_graph(x, beta, "batchnorm2d");
    const Tensor& xv = x.value();
    const detail::ChannelLayout L(xv, "batchnorm2d");
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    if (gv.size() != L.c || bv.size() != L.c) {
        throw DimensionError("batchnorm2d: " + std::to_string(L.c) + " channels but gamma/beta sized " +
                             std::to_string(gv.size()) + "/" + std::to_string(bv.size()));
    }
    if (L.n == 0) throw DimensionError("batchnorm2d: empty batch");

    std::vector<double> mu, var;
    if (mode == BatchNormMode::train) {
        std::tie(mu, var) = detail::channel_moments(xv, L);
        if (running != nullptr) {
            if (running->mean.size() != L.c) throw DimensionError("batchnorm2d: running stats channel mismatch");
            for (std::size_t ch = 0; ch < L.c; ++ch) {
                running->mean[ch] = (1.0 - opt.momentum) * running->mean[ch] + opt.momentum * mu[ch];
                running->var[ch] = (1.0 - opt.momentum) * running->var[ch] + opt.momentum * var[ch];
            }
        }
    } else {
        if (running == nullptr) throw ConfigError("batchnorm2d: eval mode needs running statistics");
        if (running->mean.size() != L.c) throw DimensionError("batchnorm2d: running stats channel mismatch");
        mu.assign(running->mean.data().begin(), running->mean.data().end());
        var.assign(running->var.data().begin(), running->var.data().end());
    }

    std::vector<double> inv_std(L.c);
    for (std::size_t ch = 0; ch < L.c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + opt.eps);

    Tensor xhat(xv.shape());
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < L.n; ++i) {
        for (std::size_t ch = 0; ch < L.c; ++ch) {
            for (std::size_t p = 0; p < L.s; ++p) {
                const std::size_t idx = L.at(i, ch, p);
                xhat[idx] = (xv[idx] - mu[ch]) * inv_std[ch];
                out[idx] = gv[ch] * xhat[idx] + bv[ch];
            }
        }
    }

    const bool batch_stats = mode == BatchNormMode::train;
    return x.graph->record(
        "batchnorm2d", std::move(out), {x, gamma, beta},
        [L, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
            const auto& ins = g.inputs(self);
            const Tensor& go = g.out_grad(self);
            const Tensor& gv = g.value(ins[1]);
            std::vector<double> sum_dy(L.c, 0.0), sum_dy_xhat(L.c, 0.0);
            for (std::size_t i = 0; i < L.n; ++i) {
                for (std::size_t ch = 0; ch < L.c; ++ch) {
                    for (std::size_t p = 0; p < L.s; ++p) {
                        const std::size_t idx = L.at(i, ch, p);
                        sum_dy[ch] += go[idx];
                        sum_dy_xhat[ch] += go[idx] * xhat[idx];
                    }
                }
            }
            if (g.needs_grad(ins[1])) {
                auto& gg = g.grad_buffer(ins[1]);
                for (std::size_t ch = 0; ch < L.c; ++ch) gg[ch] += sum_dy_xhat[ch];
            }
            if (g.needs_grad(ins[2])) {
                auto& gb = g.grad_buffer(ins[2]);
                for (std::size_t ch = 0; ch < L.c; ++ch) gb[ch] += sum_dy[ch];
            }
            if (!g.needs_grad(ins[0])) return;
            auto& gx = g.grad_buffer(ins[0]);
            const double m = static_cast<double>(L.count());
            for (std::size_t i = 0; i < L.n; ++i) {
                for (std::size_t ch = 0; ch < L.c; ++ch) {
                    const double k = gv[ch] * inv_std[ch];
                    for (std::size_t p = 0; p < L.s; ++p) {
                        const std::size_t idx = L.at(i, ch, p);
                        if (batch_stats) {
                            gx[idx] += k * (go[idx] - sum_dy[ch] / m - xhat[idx] * sum_dy_xhat[ch] / m);
                        } else {
                            gx[idx] += k * go[idx];
                        }
                    }
                }
            }
        });
}

/// Per-channel mean over N, H, W: [N×C×H×W] → [C].
inline Var channel_mean(Var x) {
    const Tensor& xv = x.value();
    const detail::ChannelLayout L(xv, "channel_mean");
    auto [mu, var] = detail::channel_moments(xv, L);
    Tensor out(Shape{L.c}, std::move(mu));
    return x.graph->record("channel_mean", std::move(out), {x}, [L](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        auto& gi = g.grad_buffer(g.inputs(self)[0]);
        const double inv = 1.0 / static_cast<double>(L.count());
        for (std::size_t i = 0; i < L.n; ++i) {
            for (std::size_t ch = 0; ch < L.c; ++ch) {
                for (std::size_t p = 0; p < L.s; ++p) gi[L.at(i, ch, p)] += go[ch] * inv;
            }
        }
    });
}

/// Per-channel biased variance over N, H, W: [N×C×H×W] → [C].
inline Var channel_var(Var x) {
    const Tensor& xv = x.value();
    const detail::ChannelLayout L(xv, "channel_var");
    auto [mu, var] = detail::channel_moments(xv, L);
    Tensor out(Shape{L.c}, std::move(var));
    return x.graph->record("channel_var", std::move(out), {x}, [L, mu = std::move(mu)](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        const auto in = g.inputs(self)[0];
        const Tensor& xv = g.value(in);
        auto& gi = g.grad_buffer(in);
        const double k = 2.0 / static_cast<double>(L.count());
        for (std::size_t i = 0; i < L.n; ++i) {
            for (std::size_t ch = 0; ch < L.c; ++ch) {
                for (std::size_t p = 0; p < L.s; ++p) {
                    const std::size_t idx = L.at(i, ch, p);
                    gi[idx] += go[ch] * k * (xv[idx] - mu[ch]);
                }
            }
        }
    });
}

struct FeatureStats {
    Var mean;
    Var var;
};

/// Per-channel mean and biased variance of a feature map, both differentiable.
inline FeatureStats feature_stats(Var x) { return {channel_mean(x), channel_var(x)}; }

} // namespace zsinv::ad
