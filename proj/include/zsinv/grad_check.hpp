// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "zsinv/autodiff.hpp"

namespace zsinv::ad {

/// Scalar-valued function of one tensor, expressed on a fresh graph.
using ScalarFn = std::function<Var(Graph&, Var)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    bool passed = false;
};

/// Relative error floor: |a − n| / max(|a|, |n|, floor).
inline constexpr double kGradCheckFloor = 1e-3;

inline double eval_scalar(const ScalarFn& f, const Tensor& x) {
    Graph g;
    return f(g, g.constant(x)).value().item();
}

inline Tensor analytic_gradient(const ScalarFn& f, const Tensor& x) {
    Graph g;
    Var xv = g.leaf(x, true);
    Var y = f(g, xv);
    g.backward(y);
    return g.grad(xv);
}

/// Compare a given gradient against central differences of f at x.
inline GradCheckReport compare_gradient(const ScalarFn& f, const Tensor& x, const Tensor& analytic, double h, double tol) {
    if (analytic.shape() != x.shape()) throw DimensionError("compare_gradient: gradient shape mismatch");
    GradCheckReport rep;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = eval_scalar(f, probe);
        probe[i] = x[i] - h;
        const double down = eval_scalar(f, probe);
        probe[i] = x[i];
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
        if (rel > rep.max_rel_error || i == 0) {
            rep.max_rel_error = std::max(rep.max_rel_error, rel);
            rep.worst_index = i;
            rep.analytic_at_worst = a;
            rep.numeric_at_worst = numeric;
        }
    }
    rep.passed = rep.max_rel_error < tol;
    return rep;
}

/// Max relative error between the reverse-mode gradient of f and central
/// differences with step h; passes when below tol.
inline GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5, double tol = 1e-6) {
    return compare_gradient(f, x, analytic_gradient(f, x), h, tol);
}

} // namespace zsinv::ad
