// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>

#include "zsinv/tensor.hpp"

namespace zsinv::opt {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moments per named parameter plus the shared step counter.
struct AdamState {
    AdamConfig cfg;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::uint64_t t = 0;

    friend bool operator==(const AdamState& a, const AdamState& b) {
        return a.t == b.t && a.m == b.m && a.v == b.v && a.cfg.beta1 == b.cfg.beta1 && a.cfg.beta2 == b.cfg.beta2 &&
               a.cfg.eps == b.cfg.eps;
    }
};

/// One bias-corrected Adam update of every parameter named in `grads`.
/// Parameters absent from `grads` are left alone. A non-finite gradient
/// aborts before anything is modified.
inline void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads, AdamState& st,
                      double lr) {
    if (!std::isfinite(lr) || lr < 0.0) throw ConfigError("adam_step: learning rate must be finite and >= 0");
    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        if (it == params.end()) throw ConfigError("adam_step: gradient for unknown parameter " + name);
        if (it->second.shape() != g.shape()) {
            throw DimensionError("adam_step: " + name + " has shape " + shape_str(it->second.shape()) + " but gradient " +
                                 shape_str(g.shape()));
        }
        const auto d = g.data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (!std::isfinite(d[i])) {
                throw NumericError("adam_step: non-finite gradient " + std::to_string(d[i]) + " in " + name + "[" +
                                   std::to_string(i) + "] at step " + std::to_string(st.t + 1));
            }
        }
    }

    ++st.t;
    const double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, double(st.t));
    const double c2 = 1.0 - std::pow(b2, double(st.t));
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        double* pm = st.m.try_emplace(name, Tensor::zeros(p.shape())).first->second.data().data();
        double* pv = st.v.try_emplace(name, Tensor::zeros(p.shape())).first->second.data().data();
        double* pp = p.data().data();
        const double* pg = g.data().data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            pm[i] = b1 * pm[i] + (1.0 - b1) * pg[i];
            pv[i] = b2 * pv[i] + (1.0 - b2) * pg[i] * pg[i];
            const double mhat = pm[i] / c1;
            const double vhat = pv[i] / c2;
            pp[i] -= lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
        }
    }
}

/// Cosine annealing with warm restarts over `restarts + 1` equal periods.
struct ScheduleConfig {
    double lr_max = 1e-3;
    double lr_min = 0.0;
    std::size_t total_iters = 1;
    std::size_t restarts = 3;

    void validate() const {
        if (!(lr_min >= 0.0 && lr_min <= lr_max) || !std::isfinite(lr_max)) {
            throw ConfigError("schedule: need 0 <= lr_min <= lr_max");
        }
        if (total_iters < restarts + 1) {
            throw ConfigError("schedule: " + std::to_string(total_iters) + " iterations cannot hold " +
                              std::to_string(restarts + 1) + " periods");
        }
    }
};

/// Start iteration of period j; periods differ in length by at most one when
/// total_iters is not a multiple of the period count.
inline std::size_t period_start(const ScheduleConfig& c, std::size_t j) {
    return j * c.total_iters / (c.restarts + 1);
}

inline double lr_at(const ScheduleConfig& c, std::size_t iter) {
    c.validate();
    if (iter >= c.total_iters) {
        throw ConfigError("lr_at: iteration " + std::to_string(iter) + " outside [0, " + std::to_string(c.total_iters) + ")");
    }
    std::size_t j = (iter * (c.restarts + 1)) / c.total_iters;
    while (j > 0 && period_start(c, j) > iter) --j;
    while (period_start(c, j + 1) <= iter) ++j;
    const std::size_t b = period_start(c, j);
    const double len = double(period_start(c, j + 1) - b);
    const double phase = double(iter - b) / len;
    return c.lr_min + 0.5 * (c.lr_max - c.lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

} // namespace zsinv::opt
