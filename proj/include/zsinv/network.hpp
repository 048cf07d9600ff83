// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "zsinv/batchnorm.hpp"
#include "zsinv/conv.hpp"

namespace zsinv::net {

enum class LayerKind { conv, conv_transpose, dense, maxpool, global_avg_pool, flatten, reshape };
enum class Activation { none, relu, leaky_relu, sigmoid };
enum class Mode { train, eval };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::conv_transpose: return "conv_transpose";
        case LayerKind::dense: return "dense";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::global_avg_pool: return "global_avg_pool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::reshape: return "reshape";
    }
    return "?";
}

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

/// One parameterised layer with its optional batch norm and activation.
struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;
    Activation activation = Activation::none;
    double slope = 0.0;   // leaky_relu only
    bool has_bn = false;
    Shape target_shape;   // reshape only, without the batch axis

    static LayerSpec conv(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p) {
        return {LayerKind::conv, in, out, k, s, p};
    }
    static LayerSpec conv_transpose(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p) {
        return {LayerKind::conv_transpose, in, out, k, s, p};
    }
    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out}; }
    static LayerSpec maxpool(std::size_t k, std::size_t s) { return {LayerKind::maxpool, 0, 0, k, s, 0}; }
    static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool}; }
    static LayerSpec flatten() { return {LayerKind::flatten}; }
    static LayerSpec reshape(Shape target) {
        LayerSpec l{LayerKind::reshape};
        l.target_shape = std::move(target);
        return l;
    }

    LayerSpec& bn(bool on = true) { has_bn = on; return *this; }
    LayerSpec& act(Activation a, double c = 0.0) { activation = a; slope = c; return *this; }

    bool has_weights() const {
        return kind == LayerKind::conv || kind == LayerKind::conv_transpose || kind == LayerKind::dense;
    }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Ordered layers partitioned into blocks, the units of inversion.
struct NetworkSpec {
    std::string name;
    Shape input_shape;                    // C×H×W for images, {d} for latents
    std::vector<LayerSpec> layers;
    std::vector<std::size_t> block_ends;  // exclusive end layer index of each block
    bool clamp_output = false;            // clamp to [0,1] at inference

    std::size_t num_blocks() const { return block_ends.size(); }

    /// Layer range [begin, end) of block k, 1-based.
    std::pair<std::size_t, std::size_t> block_layers(std::size_t k) const {
        if (k < 1 || k > block_ends.size()) {
            throw ConfigError("block index " + std::to_string(k) + " outside 1.." + std::to_string(block_ends.size()));
        }
        return {k == 1 ? 0 : block_ends[k - 2], block_ends[k - 1]};
    }

    /// Index of the (1-based) block containing a layer.
    std::size_t block_of_layer(std::size_t layer) const {
        for (std::size_t k = 0; k < block_ends.size(); ++k) {
            if (layer < block_ends[k]) return k + 1;
        }
        throw ConfigError("layer " + std::to_string(layer) + " outside every block");
    }

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Output extents (without batch axis) of each layer; validates the chain.
inline std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
    if (spec.input_shape.empty()) throw ConfigError(spec.name + ": empty input shape");
    if (spec.layers.empty()) throw ConfigError(spec.name + ": no layers");
    std::vector<Shape> out;
    Shape cur = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const std::string where = spec.name + " layer " + std::to_string(i) + " (" + to_string(l.kind) + "): ";
        if (l.stride < 1 || l.kernel < 1) throw ConfigError(where + "stride and kernel must be >= 1");
        if (l.activation == Activation::leaky_relu && !(l.slope > 0.0 && l.slope < 1.0)) {
            throw ConfigError(where + "leaky slope must lie in (0,1)");
        }
        if (!l.has_weights() && l.has_bn) throw ConfigError(where + "batch norm needs a weighted layer");
        if (!l.has_weights() && l.activation != Activation::none) throw ConfigError(where + "activation needs a weighted layer");
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::conv_transpose:
            case LayerKind::maxpool: {
                if (cur.size() != 3) throw ConfigError(where + "expects C×H×W input, got " + shape_str(cur));
                const bool pool = l.kind == LayerKind::maxpool;
                if (!pool && cur[0] != l.in_channels) {
                    throw ConfigError(where + "in_channels " + std::to_string(l.in_channels) + " but input has " +
                                      std::to_string(cur[0]));
                }
                const std::size_t ch = pool ? cur[0] : l.out_channels;
                if (ch == 0) throw ConfigError(where + "zero output channels");
                if (l.kind == LayerKind::conv_transpose) {
                    cur = {ch, ad::conv_transpose_out_extent(cur[1], l.kernel, l.stride, l.pad),
                           ad::conv_transpose_out_extent(cur[2], l.kernel, l.stride, l.pad)};
                } else {
                    if (pool && (l.kernel > cur[1] || l.kernel > cur[2])) throw ConfigError(where + "window larger than input");
                    const std::size_t p = pool ? 0 : l.pad;
                    try {
                        cur = {ch, ad::conv_out_extent(cur[1], l.kernel, l.stride, p),
                               ad::conv_out_extent(cur[2], l.kernel, l.stride, p)};
                    } catch (const ConfigError& e) {
                        throw ConfigError(where + e.what());
                    }
                }
                break;
            }
            case LayerKind::dense:
                if (cur.size() != 1 || cur[0] != l.in_channels) {
                    throw ConfigError(where + "expects a vector of " + std::to_string(l.in_channels) + ", got " + shape_str(cur));
                }
                if (l.out_channels == 0) throw ConfigError(where + "zero output features");
                cur = {l.out_channels};
                break;
            case LayerKind::global_avg_pool:
                if (cur.size() != 3) throw ConfigError(where + "expects C×H×W input");
                cur = {cur[0]};
                break;
            case LayerKind::flatten:
                cur = {shape_numel(cur)};
                break;
            case LayerKind::reshape:
                if (l.target_shape.empty() || shape_numel(l.target_shape) != shape_numel(cur)) {
                    throw ConfigError(where + "cannot reshape " + shape_str(cur) + " to " + shape_str(l.target_shape));
                }
                cur = l.target_shape;
                break;
        }
        out.push_back(cur);
    }
    return out;
}

/// Full structural validation: shape chain, block partition and pooling placement.
inline void validate(const NetworkSpec& spec) {
    infer_shapes(spec);
    if (spec.block_ends.empty()) throw ConfigError(spec.name + ": needs at least one block");
    std::size_t prev = 0;
    for (auto e : spec.block_ends) {
        if (e <= prev) throw ConfigError(spec.name + ": block boundaries must be strictly increasing");
        prev = e;
    }
    if (prev != spec.layers.size()) throw ConfigError(spec.name + ": blocks must cover every layer");
    for (std::size_t k = 1; k <= spec.num_blocks(); ++k) {
        auto [b, e] = spec.block_layers(k);
        bool weighted = false;
        for (std::size_t i = b; i < e; ++i) weighted = weighted || spec.layers[i].has_weights();
        for (std::size_t i = b; i < e; ++i) {
            if (spec.layers[i].kind == LayerKind::maxpool && !weighted) {
                throw ConfigError(spec.name + ": maxpool in block " + std::to_string(k) + " must share it with a weighted layer");
            }
        }
    }
}

inline Shape output_shape(const NetworkSpec& spec) { return infer_shapes(spec).back(); }

/// Input extents of block k (1-based).
inline Shape block_input_shape(const NetworkSpec& spec, std::size_t k) {
    auto [b, e] = spec.block_layers(k);
    return b == 0 ? spec.input_shape : infer_shapes(spec)[b - 1];
}

/// Output extents of block k (1-based).
inline Shape block_output_shape(const NetworkSpec& spec, std::size_t k) {
    return infer_shapes(spec)[spec.block_layers(k).second - 1];
}

/// The first `blocks` blocks as a standalone spec.
inline NetworkSpec prefix(const NetworkSpec& spec, std::size_t blocks) {
    if (blocks < 1 || blocks > spec.num_blocks()) throw ConfigError("prefix: block count out of range");
    NetworkSpec out = spec;
    out.name = spec.name + "[1:" + std::to_string(blocks) + "]";
    out.block_ends.resize(blocks);
    out.layers.resize(out.block_ends.back());
    return out;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

inline std::string layer_key(std::size_t layer) { return "layer" + std::to_string(layer); }
inline std::string param_key(std::size_t layer, const char* field) { return layer_key(layer) + "." + field; }

/// Named parameter tensors plus running statistics of every batch-norm layer.
struct ParamStore {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, ad::RunningStats> running;

    const Tensor& at(const std::string& key) const {
        auto it = tensors.find(key);
        if (it == tensors.end()) throw ConfigError("missing parameter " + key);
        return it->second;
    }

    std::size_t num_values() const {
        std::size_t n = 0;
        for (const auto& [k, t] : tensors) n += t.size();
        return n;
    }

    friend bool operator==(const ParamStore&, const ParamStore&) = default;
};

inline double he_fan_in(const LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::conv: return double(l.in_channels * l.kernel * l.kernel);
        case LayerKind::conv_transpose:
            // inputs feeding one output location
            return std::max(1.0, double(l.in_channels * l.kernel * l.kernel) / double(l.stride * l.stride));
        case LayerKind::dense: return double(l.in_channels);
        default: return 1.0;
    }
}

/// He-normal weights, zero biases, γ = 1, β = 0, running μ = 0 and σ² = 1.
inline ParamStore init_params(const NetworkSpec& spec, std::uint64_t seed) {
    validate(spec);
    std::mt19937_64 rng(seed);
    ParamStore ps;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        if (!l.has_weights()) continue;
        Shape wshape;
        switch (l.kind) {
            case LayerKind::conv: wshape = {l.out_channels, l.in_channels, l.kernel, l.kernel}; break;
            case LayerKind::conv_transpose: wshape = {l.in_channels, l.out_channels, l.kernel, l.kernel}; break;
            default: wshape = {l.out_channels, l.in_channels}; break;
        }
        ps.tensors[param_key(i, "weight")] = Tensor::normal(wshape, 0.0, std::sqrt(2.0 / he_fan_in(l)), rng);
        ps.tensors[param_key(i, "bias")] = Tensor::zeros({l.out_channels});
        if (l.has_bn) {
            ps.tensors[param_key(i, "gamma")] = Tensor::full({l.out_channels}, 1.0);
            ps.tensors[param_key(i, "beta")] = Tensor::zeros({l.out_channels});
            ps.running[layer_key(i)] = ad::RunningStats::fresh(l.out_channels);
        }
    }
    return ps;
}

/// Names of the parameters owned by layers [begin, end).
inline std::vector<std::string> param_names(const NetworkSpec& spec, std::size_t begin, std::size_t end) {
    std::vector<std::string> names;
    for (std::size_t i = begin; i < end; ++i) {
        const auto& l = spec.layers[i];
        if (!l.has_weights()) continue;
        names.push_back(param_key(i, "weight"));
        names.push_back(param_key(i, "bias"));
        if (l.has_bn) {
            names.push_back(param_key(i, "gamma"));
            names.push_back(param_key(i, "beta"));
        }
    }
    return names;
}

// ---------------------------------------------------------------------------
// Graph-level forward
// ---------------------------------------------------------------------------

/// A ParamStore's tensors placed on a graph, trainable or constant per layer.
class Binding {
public:
    Binding(ad::Graph& g, const ParamStore& ps, const std::function<bool(std::size_t layer)>& trainable = {})
        : graph_(&g) {
        for (const auto& [key, t] : ps.tensors) {
            const std::size_t layer = std::stoul(key.substr(5, key.find('.') - 5));
            vars_.emplace(key, g.leaf(t, trainable ? trainable(layer) : false));
        }
    }

    ad::Var operator[](const std::string& key) const {
        auto it = vars_.find(key);
        if (it == vars_.end()) throw ConfigError("unbound parameter " + key);
        return it->second;
    }

    const std::map<std::string, ad::Var>& vars() const { return vars_; }
    ad::Graph& graph() const { return *graph_; }

private:
    ad::Graph* graph_;
    std::map<std::string, ad::Var> vars_;
};

/// Gradients of the named bound parameters after Graph::backward.
inline std::map<std::string, Tensor> collect_grads(const Binding& b, const std::vector<std::string>& names) {
    std::map<std::string, Tensor> out;
    for (const auto& n : names) out.emplace(n, b.graph().grad(b[n]));
    return out;
}

/// Per-call forward settings.
struct ForwardContext {
    const NetworkSpec* spec = nullptr;
    const Binding* params = nullptr;
    /// Running statistics read in eval mode and updated in train mode when non-null.
    std::map<std::string, ad::RunningStats>* running = nullptr;
    /// Read-only statistics used when `running` is null.
    const std::map<std::string, ad::RunningStats>* running_ro = nullptr;
    /// Mode per layer; eval everywhere when empty.
    std::function<Mode(std::size_t layer)> mode;
    /// When set, receives the input of every batch-norm layer in order.
    std::vector<std::pair<std::size_t, ad::Var>>* bn_inputs = nullptr;
    ad::BatchNormOptions bn;
};

inline ad::Var apply_activation(ad::Var x, const LayerSpec& l) {
    switch (l.activation) {
        case Activation::none: return x;
        case Activation::relu: return ad::relu(x);
        case Activation::leaky_relu: return ad::leaky_relu(x, l.slope);
        case Activation::sigmoid: return ad::sigmoid(x);
    }
    return x;
}

inline ad::Var forward_layer(const ForwardContext& ctx, std::size_t i, ad::Var x) {
    const auto& l = ctx.spec->layers.at(i);
    const auto& P = *ctx.params;
    const std::size_t n = x.shape()[0];
    ad::Var y = x;
    switch (l.kind) {
        case LayerKind::conv:
            y = ad::conv2d(x, P[param_key(i, "weight")], P[param_key(i, "bias")], l.stride, l.pad);
            break;
        case LayerKind::conv_transpose:
            y = ad::conv_transpose2d(x, P[param_key(i, "weight")], P[param_key(i, "bias")], l.stride, l.pad);
            break;
        case LayerKind::dense:
            y = ad::linear(x, P[param_key(i, "weight")], P[param_key(i, "bias")]);
            break;
        case LayerKind::maxpool: y = ad::maxpool2d(x, l.kernel, l.stride); break;
        case LayerKind::global_avg_pool: y = ad::global_avg_pool(x); break;
        case LayerKind::flatten: y = ad::reshape(x, {n, x.value().size() / n}); break;
        case LayerKind::reshape: {
            Shape s{n};
            s.insert(s.end(), l.target_shape.begin(), l.target_shape.end());
            y = ad::reshape(x, s);
            break;
        }
    }
    if (l.has_bn) {
        if (ctx.bn_inputs != nullptr) ctx.bn_inputs->emplace_back(i, y);
        const Mode m = ctx.mode ? ctx.mode(i) : Mode::eval;
        const std::string key = layer_key(i);
        ad::RunningStats* rs = nullptr;
        ad::RunningStats scratch;
        if (ctx.running != nullptr) {
            rs = &ctx.running->at(key);
        } else if (ctx.running_ro != nullptr) {
            scratch = ctx.running_ro->at(key);
            rs = &scratch;
        }
        if (m == Mode::eval && rs == nullptr) throw ConfigError("eval-mode forward without running statistics");
        y = ad::batchnorm2d(y, P[param_key(i, "gamma")], P[param_key(i, "beta")],
                            m == Mode::train ? ad::BatchNormMode::train : ad::BatchNormMode::eval, rs, ctx.bn);
    }
    return apply_activation(y, l);
}

/// Apply blocks first..last (1-based, inclusive) to x.
inline ad::Var forward_blocks(const ForwardContext& ctx, ad::Var x, std::size_t first, std::size_t last) {
    if (first < 1 || first > last || last > ctx.spec->num_blocks()) {
        throw ConfigError("block range " + std::to_string(first) + ".." + std::to_string(last) + " invalid for " +
                          std::to_string(ctx.spec->num_blocks()) + " blocks");
    }
    const std::size_t begin = ctx.spec->block_layers(first).first;
    const std::size_t end = ctx.spec->block_layers(last).second;
    for (std::size_t i = begin; i < end; ++i) x = forward_layer(ctx, i, x);
    return x;
}

/// Apply every block, returning the input followed by each block output.
inline std::vector<ad::Var> forward_trace(const ForwardContext& ctx, ad::Var x) {
    std::vector<ad::Var> trace{x};
    for (std::size_t k = 1; k <= ctx.spec->num_blocks(); ++k) trace.push_back(forward_blocks(ctx, trace.back(), k, k));
    return trace;
}

inline void check_input(const NetworkSpec& spec, const Shape& expected, const Tensor& x, const char* op) {
    if (x.rank() != expected.size() + 1 || !std::equal(expected.begin(), expected.end(), x.shape().begin() + 1)) {
        throw DimensionError(std::string(op) + ": " + spec.name + " expects [N]" + shape_str(expected) + ", got " +
                             shape_str(x.shape()));
    }
}

// ---------------------------------------------------------------------------
// Tensor-level forward
// ---------------------------------------------------------------------------

/// Input followed by F_{1:l}(x) for l = 1..L.
using ActivationTrace = std::vector<Tensor>;

/// Eval-mode batches are split into chunks of this many items; the result is
/// identical to an unchunked pass because items are independent.
inline constexpr std::size_t kEvalChunk = 64;

/// Run every block. Eval mode uses the stored running statistics; train mode
/// normalises with batch statistics and leaves the store untouched.
inline ActivationTrace forward_full(const NetworkSpec& spec, const ParamStore& params, const Tensor& x,
                                    Mode mode = Mode::eval) {
    check_input(spec, spec.input_shape, x, "forward_full");
    const std::size_t n = x.dim(0);
    const std::size_t chunk = mode == Mode::eval ? kEvalChunk : n;
    std::vector<std::vector<Tensor>> parts(spec.num_blocks() + 1);
    for (std::size_t b = 0; b < n; b += chunk) {
        const std::size_t e = std::min(n, b + chunk);
        ad::Graph g;
        Binding bind(g, params);
        ForwardContext ctx{&spec, &bind, nullptr, &params.running, [mode](std::size_t) { return mode; }};
        auto tr = forward_trace(ctx, g.constant(chunk == n ? x : x.slice_rows(b, e)));
        for (std::size_t l = 0; l < tr.size(); ++l) parts[l].push_back(tr[l].value());
    }
    ActivationTrace trace;
    for (auto& p : parts) trace.push_back(p.size() == 1 ? std::move(p[0]) : concat_rows(p));
    return trace;
}

/// F_{k:l}(x) in eval mode, 1 ≤ k ≤ l ≤ L; x must match block k's input.
inline Tensor forward_sub(const NetworkSpec& spec, const ParamStore& params, const Tensor& x, std::size_t k, std::size_t l) {
    if (k < 1 || k > l || l > spec.num_blocks()) {
        throw ConfigError("forward_sub: range " + std::to_string(k) + ".." + std::to_string(l) + " outside 1.." +
                          std::to_string(spec.num_blocks()));
    }
    check_input(spec, block_input_shape(spec, k), x, "forward_sub");
    std::vector<Tensor> parts;
    for (std::size_t b = 0; b < x.dim(0); b += kEvalChunk) {
        const std::size_t e = std::min(x.dim(0), b + kEvalChunk);
        ad::Graph g;
        Binding bind(g, params);
        ForwardContext ctx{&spec, &bind, nullptr, &params.running};
        parts.push_back(forward_blocks(ctx, g.constant(x.dim(0) <= kEvalChunk ? x : x.slice_rows(b, e)), k, l).value());
    }
    return parts.size() == 1 ? std::move(parts[0]) : concat_rows(parts);
}

// ---------------------------------------------------------------------------
// Mirroring and expansion analysis
// ---------------------------------------------------------------------------

inline constexpr double kInverseSlope = 0.2;

namespace detail {

inline LayerSpec inverse_conv(LayerKind kind, std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p) {
    LayerSpec l{kind, in, out, k, s, p};
    return l.bn().act(Activation::leaky_relu, kInverseSlope);
}

/// Inverse layers for one target block, in execution order.
inline std::vector<LayerSpec> mirror_block(const NetworkSpec& spec, std::size_t k, const std::vector<Shape>& shapes) {
    auto [b, e] = spec.block_layers(k);
    const Shape in = b == 0 ? spec.input_shape : shapes[b - 1];
    const Shape out = shapes[e - 1];

    bool has_pool = false;
    for (std::size_t i = b; i < e; ++i) has_pool = has_pool || spec.layers[i].kind == LayerKind::maxpool;
    if (has_pool) {
        if (in.size() != 3 || out.size() != 3 || in[1] % out[1] != 0 || in[2] % out[2] != 0 || in[1] / out[1] != in[2] / out[2]) {
            throw ConfigError("mirror: pooled block " + std::to_string(k) + " must downsample both axes by one integer factor");
        }
        const std::size_t f = in[1] / out[1];
        const std::size_t kern = f % 2 == 0 ? 2 * f : f;
        const std::size_t pad = f % 2 == 0 ? f / 2 : 0;
        return {inverse_conv(LayerKind::conv_transpose, out[0], in[0], kern, f, pad)};
    }

    std::vector<LayerSpec> inv;
    for (std::size_t i = e; i-- > b;) {
        const auto& l = spec.layers[i];
        const Shape& lin = i == 0 ? spec.input_shape : shapes[i - 1];
        switch (l.kind) {
            case LayerKind::conv:
                if (l.stride > 1 || l.activation != Activation::none) {
                    // nonlinear or lossy: undo the window at width W, then refine down to Cin
                    const std::size_t w = std::max(l.in_channels, l.out_channels);
                    inv.push_back(inverse_conv(LayerKind::conv_transpose, l.out_channels, w, l.kernel, l.stride, l.pad));
                    inv.push_back(inverse_conv(LayerKind::conv, w, l.in_channels, 3, 1, 1));
                } else {
                    inv.push_back(inverse_conv(LayerKind::conv_transpose, l.out_channels, l.in_channels, l.kernel, l.stride, l.pad));
                }
                break;
            case LayerKind::conv_transpose:
                if (l.stride > 1) inv.push_back(inverse_conv(LayerKind::conv, l.out_channels, l.out_channels, 3, 1, 1));
                inv.push_back(inverse_conv(LayerKind::conv, l.out_channels, l.in_channels, l.kernel, l.stride, l.pad));
                break;
            case LayerKind::dense:
                inv.push_back(inverse_conv(LayerKind::dense, l.out_channels, l.in_channels, 1, 1, 0));
                break;
            case LayerKind::global_avg_pool:
                inv.push_back(LayerSpec::reshape({lin[0], 1, 1}));
                if (lin[1] != lin[2]) throw ConfigError("mirror: global pooling over non-square maps");
                inv.push_back(inverse_conv(LayerKind::conv_transpose, lin[0], lin[0], lin[1], lin[1], 0));
                break;
            case LayerKind::flatten:
            case LayerKind::reshape:
                inv.push_back(lin.size() == 1 ? LayerSpec::flatten() : LayerSpec::reshape(lin));
                break;
            case LayerKind::maxpool:
                break;  // handled above
        }
    }
    return inv;
}

} // namespace detail

/// Inversion architecture: one inverse block per target block, in reverse
/// order, mapping the target's output shape back to its input shape.
inline NetworkSpec mirror_spec(const NetworkSpec& spec) {
    validate(spec);
    const auto shapes = infer_shapes(spec);
    NetworkSpec inv;
    inv.name = spec.name + "^-1";
    inv.input_shape = shapes.back();
    for (std::size_t k = spec.num_blocks(); k >= 1; --k) {
        auto layers = detail::mirror_block(spec, k, shapes);
        inv.layers.insert(inv.layers.end(), layers.begin(), layers.end());
        inv.block_ends.push_back(inv.layers.size());
    }
    // The block reconstructing the network input ends linearly.
    for (std::size_t i = inv.layers.size(); i-- > 0;) {
        if (inv.layers[i].has_weights()) {
            inv.layers[i].has_bn = false;
            inv.layers[i].activation = Activation::none;
            inv.layers[i].slope = 0.0;
            break;
        }
    }
    inv.clamp_output = spec.input_shape.size() == 3;
    validate(inv);
    return inv;
}

struct ExpansionRow {
    std::size_t layer;
    LayerKind kind;
    std::size_t in_dim;
    std::size_t out_dim;
    double ratio;
    bool flagged;  // ratio < 1: no exact left inverse
};

/// Output-to-input dimensionality m/n of every layer.
inline std::vector<ExpansionRow> expansion_report(const NetworkSpec& spec) {
    const auto shapes = infer_shapes(spec);
    std::vector<ExpansionRow> rows;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const std::size_t in = shape_numel(i == 0 ? spec.input_shape : shapes[i - 1]);
        const std::size_t out = shape_numel(shapes[i]);
        const double r = double(out) / double(in);
        rows.push_back({i, spec.layers[i].kind, in, out, r, r < 1.0});
    }
    return rows;
}

} // namespace zsinv::net
