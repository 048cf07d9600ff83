// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "zsinv/error.hpp"
#include "zsinv/tensor.hpp"

namespace zsinv::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Append-only tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and the reverse of append order is a valid topological order. A graph
/// supports exactly one backward() until zero_grad() is called.
class Graph {
public:
    /// Accumulates the node's output gradient into its inputs' gradients.
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = true) {
        value.require_finite("leaf");
        nodes_.push_back(Node{"leaf", std::move(value), Tensor{}, requires_grad, {}, {}});
        return Var{this, nodes_.size() - 1};
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Append an op node. The backward function is dropped when no input needs a gradient.
    Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
        return record(op, std::move(value), std::vector<Var>(inputs), std::move(fn));
    }

    Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
        value.require_finite(op, " output");
        Node node{std::string(op), std::move(value), Tensor{}, false, {}, {}};
        for (const auto& in : inputs) {
            if (in.graph != this) throw GraphError(std::string(op) + ": input belongs to another graph");
            node.inputs.push_back(in.id);
            node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
        }
        if (node.requires_grad) node.backward = std::move(fn);
        nodes_.push_back(std::move(node));
        return Var{this, nodes_.size() - 1};
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor& value(Var v) const { return value(v.id); }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    bool requires_grad(Var v) const { return requires_grad(v.id); }
    std::string_view op(Var v) const { return nodes_.at(v.id).op; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient of the last backward() with respect to v; zeros when v received none.
    Tensor grad(Var v) const {
        const auto& n = nodes_.at(v.id);
        if (n.grad.empty()) return Tensor::zeros(n.value.shape());
        return n.grad;
    }

    bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

    /// Gradient flowing into node `id` during backward().
    const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }

    /// Whether node `id` wants gradient contributions.
    bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Input ids of node `id`, in the order passed to record().
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

    /// Gradient buffer of node `id`, allocated with zeros on first use.
    Tensor& grad_buffer(std::size_t id) {
        auto& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
        return n.grad;
    }

    void backward(Var loss) {
        if (loss.graph != this) throw GraphError("backward: loss belongs to another graph");
        if (backward_done_) throw GraphError("backward called twice without zero_grad()");
        const auto& ln = nodes_.at(loss.id);
        if (ln.value.size() != 1) {
            throw GraphError("backward: loss must be scalar, got shape " + shape_str(ln.value.shape()));
        }
        if (!ln.requires_grad) throw GraphError("backward: loss is detached from every trainable leaf");
        backward_done_ = true;
        grad_buffer(loss.id)[0] = 1.0;
        // A node's gradient is complete once every later node has run, so
        // each buffer is checked exactly once.
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty()) continue;
            n.grad.require_finite("gradient reaching ", n.op);
            if (n.backward) n.backward(*this, i);
        }
    }

    void zero_grad() {
        for (auto& n : nodes_) n.grad = Tensor{};
        backward_done_ = false;
    }

private:
    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;
        bool requires_grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };

    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return graph->value(id); }

namespace detail {

inline void same_graph(Var a, Var b, std::string_view op) {
    if (a.graph != b.graph) throw GraphError(std::string(op) + ": operands on different graphs");
}

inline void same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

template <class F>
Tensor map(const Tensor& x, F f) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return y;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    return ConstMatMap(t.data().data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline MatMap as_mat(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    return MatMap(t.data().data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    detail::same_graph(a, b, "add");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    detail::same_shape(x, y, "add");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return a.graph->record("add", std::move(out), {a, b}, [](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        for (auto in : g.inputs(self)) {
            if (!g.needs_grad(in)) continue;
            auto& gi = g.grad_buffer(in);
            for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
        }
    });
}

inline Var sub(Var a, Var b) {
    detail::same_graph(a, b, "sub");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    detail::same_shape(x, y, "sub");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return a.graph->record("sub", std::move(out), {a, b}, [](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        const auto& ins = g.inputs(self);
        if (g.needs_grad(ins[0])) {
            auto& ga = g.grad_buffer(ins[0]);
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (g.needs_grad(ins[1])) {
            auto& gb = g.grad_buffer(ins[1]);
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
        }
    });
}

inline Var mul(Var a, Var b) {
    detail::same_graph(a, b, "mul");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    detail::same_shape(x, y, "mul");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return a.graph->record("mul", std::move(out), {a, b}, [](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        const auto& ins = g.inputs(self);
        const Tensor& x = g.value(ins[0]);
        const Tensor& y = g.value(ins[1]);
        if (g.needs_grad(ins[0])) {
            auto& ga = g.grad_buffer(ins[0]);
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
        }
        if (g.needs_grad(ins[1])) {
            auto& gb = g.grad_buffer(ins[1]);
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * x[i];
        }
    });
}

inline Var scale(Var a, double s) {
    Tensor out = detail::map(a.value(), [s](double v) { return s * v; });
    return a.graph->record("scale", std::move(out), {a}, [s](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        auto& gi = g.grad_buffer(g.inputs(self)[0]);
        for (std::size_t i = 0; i < go.size(); ++i) gi[i] += s * go[i];
    });
}

inline Var sum(Var a) {
    double acc = 0.0;
    for (double v : a.value().data()) acc += v;
    return a.graph->record("sum", Tensor::scalar(acc), {a}, [](Graph& g, std::size_t self) {
        const double go = g.out_grad(self)[0];
        auto& gi = g.grad_buffer(g.inputs(self)[0]);
        for (auto& v : gi.data()) v += go;
    });
}

inline Var mean(Var a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.graph->record("reshape", std::move(out), {a}, [](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        auto& gi = g.grad_buffer(g.inputs(self)[0]);
        for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    });
}

inline Var relu(Var a) {
    Tensor out = detail::map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
    return a.graph->record("relu", std::move(out), {a}, [](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        const auto in = g.inputs(self)[0];
        const Tensor& x = g.value(in);
        auto& gi = g.grad_buffer(in);
        for (std::size_t i = 0; i < go.size(); ++i) {
            if (x[i] > 0.0) gi[i] += go[i];
        }
    });
}

/// max(0,x) + c*min(0,x); the subgradient at 0 is c.
inline Var leaky_relu(Var a, double c) {
    Tensor out = detail::map(a.value(), [c](double v) { return v > 0.0 ? v : c * v; });
    return a.graph->record("leaky_relu", std::move(out), {a}, [c](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        const auto in = g.inputs(self)[0];
        const Tensor& x = g.value(in);
        auto& gi = g.grad_buffer(in);
        for (std::size_t i = 0; i < go.size(); ++i) gi[i] += x[i] > 0.0 ? go[i] : c * go[i];
    });
}

inline double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
    Tensor out = detail::map(a.value(), stable_sigmoid);
    return a.graph->record("sigmoid", std::move(out), {a}, [](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        const Tensor& y = g.value(self);
        auto& gi = g.grad_buffer(g.inputs(self)[0]);
        for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * y[i] * (1.0 - y[i]);
    });
}

/// log(1 + exp(x)), evaluated without overflow.
inline Var softplus(Var a) {
    Tensor out = detail::map(a.value(), [](double v) {
        return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    });
    return a.graph->record("softplus", std::move(out), {a}, [](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        const auto in = g.inputs(self)[0];
        const Tensor& x = g.value(in);
        auto& gi = g.grad_buffer(in);
        for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * stable_sigmoid(x[i]);
    });
}

/// Elementwise clamp; gradient passes only strictly inside (lo, hi).
inline Var clamp(Var a, double lo, double hi) {
    Tensor out = detail::map(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); });
    return a.graph->record("clamp", std::move(out), {a}, [lo, hi](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        const auto in = g.inputs(self)[0];
        const Tensor& x = g.value(in);
        auto& gi = g.grad_buffer(in);
        for (std::size_t i = 0; i < go.size(); ++i) {
            if (x[i] > lo && x[i] < hi) gi[i] += go[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// C = A·B for A[m×k], B[k×n].
inline Var matmul(Var a, Var b) {
    detail::same_graph(a, b, "matmul");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
    }
    const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
    Tensor out({m, n});
    detail::as_mat(out, m, n).noalias() = detail::as_mat(x, m, k) * detail::as_mat(y, k, n);
    return a.graph->record("matmul", std::move(out), {a, b}, [m, k, n](Graph& g, std::size_t self) {
        const auto& ins = g.inputs(self);
        auto dc = detail::as_mat(g.out_grad(self), m, n);
        if (g.needs_grad(ins[0])) {
            detail::as_mat(g.grad_buffer(ins[0]), m, k).noalias() += dc * detail::as_mat(g.value(ins[1]), k, n).transpose();
        }
        if (g.needs_grad(ins[1])) {
            detail::as_mat(g.grad_buffer(ins[1]), k, n).noalias() += detail::as_mat(g.value(ins[0]), m, k).transpose() * dc;
        }
    });
}

/// Fully connected layer: y = x·Wᵀ + b with x[N×in], W[out×in], b[out].
inline Var linear(Var x, Var w, Var b) {
    detail::same_graph(x, w, "linear");
    detail::same_graph(x, b, "linear");
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1) || bv.size() != wv.dim(0)) {
        throw DimensionError("linear: incompatible shapes x" + shape_str(xv.shape()) + " w" + shape_str(wv.shape()) +
                             " b" + shape_str(bv.shape()));
    }
    const std::size_t n = xv.dim(0), in = xv.dim(1), out_f = wv.dim(0);
    Tensor out({n, out_f});
    auto ym = detail::as_mat(out, n, out_f);
    ym.noalias() = detail::as_mat(xv, n, in) * detail::as_mat(wv, out_f, in).transpose();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < out_f; ++c) out[r * out_f + c] += bv[c];
    }
    return x.graph->record("linear", std::move(out), {x, w, b}, [n, in, out_f](Graph& g, std::size_t self) {
        const auto& ins = g.inputs(self);
        const Tensor& go = g.out_grad(self);
        auto dy = detail::as_mat(go, n, out_f);
        if (g.needs_grad(ins[0])) {
            detail::as_mat(g.grad_buffer(ins[0]), n, in).noalias() += dy * detail::as_mat(g.value(ins[1]), out_f, in);
        }
        if (g.needs_grad(ins[1])) {
            detail::as_mat(g.grad_buffer(ins[1]), out_f, in).noalias() += dy.transpose() * detail::as_mat(g.value(ins[0]), n, in);
        }
        if (g.needs_grad(ins[2])) {
            auto& gb = g.grad_buffer(ins[2]);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < out_f; ++c) gb[c] += go[r * out_f + c];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean absolute difference. Subgradient of |·| at 0 is 0.
inline Var l1_loss(Var a, Var b) {
    detail::same_graph(a, b, "l1_loss");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    detail::same_shape(x, y, "l1_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x[i] - y[i]);
    const double inv_n = 1.0 / static_cast<double>(x.size());
    return a.graph->record("l1_loss", Tensor::scalar(acc * inv_n), {a, b}, [inv_n](Graph& g, std::size_t self) {
        const double go = g.out_grad(self)[0] * inv_n;
        const auto& ins = g.inputs(self);
        const Tensor& x = g.value(ins[0]);
        const Tensor& y = g.value(ins[1]);
        auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
        if (g.needs_grad(ins[0])) {
            auto& ga = g.grad_buffer(ins[0]);
            for (std::size_t i = 0; i < x.size(); ++i) ga[i] += go * sgn(x[i] - y[i]);
        }
        if (g.needs_grad(ins[1])) {
            auto& gb = g.grad_buffer(ins[1]);
            for (std::size_t i = 0; i < x.size(); ++i) gb[i] -= go * sgn(x[i] - y[i]);
        }
    });
}

/// Mean squared difference.
inline Var mse_loss(Var a, Var b) {
    detail::same_graph(a, b, "mse_loss");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    detail::same_shape(x, y, "mse_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    const double inv_n = 1.0 / static_cast<double>(x.size());
    return a.graph->record("mse_loss", Tensor::scalar(acc * inv_n), {a, b}, [inv_n](Graph& g, std::size_t self) {
        const double go = 2.0 * g.out_grad(self)[0] * inv_n;
        const auto& ins = g.inputs(self);
        const Tensor& x = g.value(ins[0]);
        const Tensor& y = g.value(ins[1]);
        if (g.needs_grad(ins[0])) {
            auto& ga = g.grad_buffer(ins[0]);
            for (std::size_t i = 0; i < x.size(); ++i) ga[i] += go * (x[i] - y[i]);
        }
        if (g.needs_grad(ins[1])) {
            auto& gb = g.grad_buffer(ins[1]);
            for (std::size_t i = 0; i < x.size(); ++i) gb[i] -= go * (x[i] - y[i]);
        }
    });
}

/// Euclidean norm of the difference, ‖a − b‖₂. The gradient at a == b is taken as 0.
inline Var l2_stat_loss(Var a, Var b) {
    detail::same_graph(a, b, "l2_stat_loss");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    detail::same_shape(x, y, "l2_stat_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    const double norm = std::sqrt(acc);
    return a.graph->record("l2_stat_loss", Tensor::scalar(norm), {a, b}, [norm](Graph& g, std::size_t self) {
        if (norm == 0.0) return;
        const double go = g.out_grad(self)[0] / norm;
        const auto& ins = g.inputs(self);
        const Tensor& x = g.value(ins[0]);
        const Tensor& y = g.value(ins[1]);
        if (g.needs_grad(ins[0])) {
            auto& ga = g.grad_buffer(ins[0]);
            for (std::size_t i = 0; i < x.size(); ++i) ga[i] += go * (x[i] - y[i]);
        }
        if (g.needs_grad(ins[1])) {
            auto& gb = g.grad_buffer(ins[1]);
            for (std::size_t i = 0; i < x.size(); ++i) gb[i] -= go * (x[i] - y[i]);
        }
    });
}

/// Batch-mean cross entropy of logits [N×K] (or [K]) against integer labels,
/// via log-sum-exp.
inline Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
    const Tensor& z = logits.value();
    const std::size_t n = z.rank() == 1 ? 1 : z.dim(0);
    const std::size_t k = z.rank() == 1 ? z.dim(0) : z.dim(1);
    if (z.rank() > 2 || labels.size() != n) {
        throw DimensionError("cross_entropy: logits " + shape_str(z.shape()) + " vs " + std::to_string(labels.size()) +
                             " labels");
    }
    Tensor probs(Shape{n, k});
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] >= k) throw DimensionError("cross_entropy: label out of range");
        double mx = z[r * k];
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, z[r * k + c]);
        double se = 0.0;
        for (std::size_t c = 0; c < k; ++c) se += std::exp(z[r * k + c] - mx);
        const double lse = mx + std::log(se);
        total += lse - z[r * k + labels[r]];
        for (std::size_t c = 0; c < k; ++c) probs[r * k + c] = std::exp(z[r * k + c] - lse);
    }
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    const double inv_n = 1.0 / static_cast<double>(n);
    return logits.graph->record(
        "cross_entropy", Tensor::scalar(total * inv_n), {logits},
        [probs = std::move(probs), lab = std::move(lab), n, k, inv_n](Graph& g, std::size_t self) {
            const double go = g.out_grad(self)[0] * inv_n;
            auto& gi = g.grad_buffer(g.inputs(self)[0]);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < k; ++c) {
                    gi[r * k + c] += go * (probs[r * k + c] - (c == lab[r] ? 1.0 : 0.0));
                }
            }
        });
}

/// Anisotropic total variation of [N×C×H×W]: the mean, over all horizontal and
/// vertical neighbour pairs, of their absolute difference.
inline Var total_variation(Var img) {
    const Tensor& x = img.value();
    if (x.rank() != 4) throw DimensionError("total_variation expects N×C×H×W, got " + shape_str(x.shape()));
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t pairs = planes * (h * (w - 1) + (h - 1) * w);
    if (pairs == 0) {
        return img.graph->record("total_variation", Tensor::scalar(0.0), {img}, [](Graph&, std::size_t) {});
    }
    double acc = 0.0;
    for (std::size_t p = 0; p < planes; ++p) {
        const double* s = x.data().data() + p * h * w;
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                if (j + 1 < w) acc += std::abs(s[i * w + j + 1] - s[i * w + j]);
                if (i + 1 < h) acc += std::abs(s[(i + 1) * w + j] - s[i * w + j]);
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(pairs);
    return img.graph->record("total_variation", Tensor::scalar(acc * inv), {img},
                             [planes, h, w, inv](Graph& g, std::size_t self) {
                                 const double go = g.out_grad(self)[0] * inv;
                                 const auto in = g.inputs(self)[0];
                                 const Tensor& x = g.value(in);
                                 auto& gi = g.grad_buffer(in);
                                 auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
                                 for (std::size_t p = 0; p < planes; ++p) {
                                     const double* s = x.data().data() + p * h * w;
                                     double* gs = gi.data().data() + p * h * w;
                                     for (std::size_t i = 0; i < h; ++i) {
                                         for (std::size_t j = 0; j < w; ++j) {
                                             if (j + 1 < w) {
                                                 const double d = go * sgn(s[i * w + j + 1] - s[i * w + j]);
                                                 gs[i * w + j + 1] += d;
                                                 gs[i * w + j] -= d;
                                             }
                                             if (i + 1 < h) {
                                                 const double d = go * sgn(s[(i + 1) * w + j] - s[i * w + j]);
                                                 gs[(i + 1) * w + j] += d;
                                                 gs[i * w + j] -= d;
                                             }
                                         }
                                     }
                                 }
                             });
}

} // namespace zsinv::ad
