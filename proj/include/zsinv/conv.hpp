// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "zsinv/autodiff.hpp"

namespace zsinv::ad {

/// Geometry of a 2-D sliding window (shared by conv, transpose and pooling).
struct Window {
    std::size_t kh = 1, kw = 1, stride = 1, pad = 0;
};

/// Output extent of a zero-padded cross-correlation. Throws unless the extent is integral.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (stride == 0 || k == 0) throw ConfigError("conv: kernel and stride must be positive");
    if (in + 2 * pad < k) {
        throw ConfigError("conv: window " + std::to_string(k) + " larger than padded input " + std::to_string(in + 2 * pad));
    }
    const std::size_t span = in + 2 * pad - k;
    if (span % stride != 0) {
        throw ConfigError("conv: non-integral output extent (" + std::to_string(in) + "+2*" + std::to_string(pad) + "-" +
                          std::to_string(k) + ")/" + std::to_string(stride));
    }
    return span / stride + 1;
}

/// Output extent of the transpose (adjoint) of a conv with the same window.
inline std::size_t conv_transpose_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (stride == 0 || k == 0) throw ConfigError("conv_transpose: kernel and stride must be positive");
    const std::size_t full = (in - 1) * stride + k;
    if (full <= 2 * pad) throw ConfigError("conv_transpose: padding consumes the whole output");
    return full - 2 * pad;
}

namespace detail {

/// Unfold one C×H×W image into a (C·kh·kw)×(Ho·Wo) column matrix.
inline void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, const Window& win, std::size_t ho,
                   std::size_t wo, double* col) {
    const std::size_t cols = ho * wo;
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ki = 0; ki < win.kh; ++ki) {
            for (std::size_t kj = 0; kj < win.kw; ++kj) {
                double* row = col + ((ch * win.kh + ki) * win.kw + kj) * cols;
                for (std::size_t oi = 0; oi < ho; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * win.stride + ki) - static_cast<std::ptrdiff_t>(win.pad);
                    double* dst = row + oi * wo;
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(dst, dst + wo, 0.0);
                        continue;
                    }
                    const double* src = img + (ch * h + static_cast<std::size_t>(ii)) * w;
                    for (std::size_t oj = 0; oj < wo; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * win.stride + kj) - static_cast<std::ptrdiff_t>(win.pad);
                        dst[oj] = (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : src[jj];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-add a column matrix back into a C×H×W image.
inline void col2im(const double* col, std::size_t c, std::size_t h, std::size_t w, const Window& win, std::size_t ho,
                   std::size_t wo, double* img) {
    const std::size_t cols = ho * wo;
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ki = 0; ki < win.kh; ++ki) {
            for (std::size_t kj = 0; kj < win.kw; ++kj) {
                const double* row = col + ((ch * win.kh + ki) * win.kw + kj) * cols;
                for (std::size_t oi = 0; oi < ho; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * win.stride + ki) - static_cast<std::ptrdiff_t>(win.pad);
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                    double* dst = img + (ch * h + static_cast<std::size_t>(ii)) * w;
                    const double* src = row + oi * wo;
                    for (std::size_t oj = 0; oj < wo; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * win.stride + kj) - static_cast<std::ptrdiff_t>(win.pad);
                        if (jj >= 0 && jj < static_cast<std::ptrdiff_t>(w)) dst[jj] += src[oj];
                    }
                }
            }
        }
    }
}

struct ConvGeom {
    std::size_t n, c, h, w;   // "image side" (conv input, transpose output)
    std::size_t o, ho, wo;    // "feature side" (conv output, transpose input)
    Window win;
    std::size_t ckk() const { return c * win.kh * win.kw; }
};

} // namespace detail

/// Zero-padded 2-D cross-correlation (no kernel flip).
///
/// x[N×C×H×W], w[O×C×kh×kw], b[O] → [N×O×H′×W′] with H′ = (H + 2·pad − kh)/stride + 1,
/// which must be integral.
inline Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
    detail::same_graph(x, w, "conv2d");
    detail::same_graph(x, b, "conv2d");
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || bv.size() != wv.dim(0)) {
        throw DimensionError("conv2d: incompatible shapes x" + shape_str(xv.shape()) + " w" + shape_str(wv.shape()) +
                             " b" + shape_str(bv.shape()));
    }
    detail::ConvGeom geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), 0, 0, {wv.dim(2), wv.dim(3), stride, pad}};
    geo.ho = conv_out_extent(geo.h, geo.win.kh, stride, pad);
    geo.wo = conv_out_extent(geo.w, geo.win.kw, stride, pad);

    const std::size_t ckk = geo.ckk(), hw_out = geo.ho * geo.wo, hw_in = geo.h * geo.w;
    Tensor out({geo.n, geo.o, geo.ho, geo.wo});
    std::vector<double> col(ckk * hw_out);
    auto wm = detail::as_mat(wv, geo.o, ckk);
    for (std::size_t i = 0; i < geo.n; ++i) {
        detail::im2col(xv.data().data() + i * geo.c * hw_in, geo.c, geo.h, geo.w, geo.win, geo.ho, geo.wo, col.data());
        auto ym = detail::as_mat(out, geo.o, hw_out, i * geo.o * hw_out);
        ym.noalias() = wm * detail::ConstMatMap(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(hw_out));
        for (std::size_t oc = 0; oc < geo.o; ++oc) ym.row(static_cast<Eigen::Index>(oc)).array() += bv[oc];
    }

    return x.graph->record("conv2d", std::move(out), {x, w, b}, [geo](Graph& g, std::size_t self) {
        const auto& ins = g.inputs(self);
        const Tensor& go = g.out_grad(self);
        const Tensor& xv = g.value(ins[0]);
        const Tensor& wv = g.value(ins[1]);
        const std::size_t ckk = geo.ckk(), hw_out = geo.ho * geo.wo, hw_in = geo.h * geo.w;
        const bool need_x = g.needs_grad(ins[0]);
        const bool need_w = g.needs_grad(ins[1]);
        const bool need_b = g.needs_grad(ins[2]);
        std::vector<double> col(ckk * hw_out);
        auto wm = detail::as_mat(wv, geo.o, ckk);
        for (std::size_t i = 0; i < geo.n; ++i) {
            auto dy = detail::as_mat(go, geo.o, hw_out, i * geo.o * hw_out);
            detail::MatMap colm(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(hw_out));
            if (need_w) {
                detail::im2col(xv.data().data() + i * geo.c * hw_in, geo.c, geo.h, geo.w, geo.win, geo.ho, geo.wo, col.data());
                detail::as_mat(g.grad_buffer(ins[1]), geo.o, ckk).noalias() += dy * colm.transpose();
            }
            if (need_x) {
                colm.noalias() = wm.transpose() * dy;
                detail::col2im(col.data(), geo.c, geo.h, geo.w, geo.win, geo.ho, geo.wo,
                               g.grad_buffer(ins[0]).data().data() + i * geo.c * hw_in);
            }
            if (need_b) {
                auto& gb = g.grad_buffer(ins[2]);
                // plain loop: Eigen's vectorised sum depends on buffer alignment
                const double* d = go.data().data() + i * geo.o * hw_out;
                for (std::size_t oc = 0; oc < geo.o; ++oc) {
                    double acc = 0;
                    for (std::size_t j = 0; j < hw_out; ++j) acc += d[oc * hw_out + j];
                    gb[oc] += acc;
                }
            }
        }
    });
}

/// Transposed convolution: the exact linear adjoint of conv2d with the same
/// weight, stride and padding, plus a bias.
///
/// x[N×Cin×H×W], w[Cin×Cout×kh×kw], b[Cout] → [N×Cout×H′×W′] with
/// H′ = (H − 1)·stride − 2·pad + kh.
inline Var conv_transpose2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
    detail::same_graph(x, w, "conv_transpose2d");
    detail::same_graph(x, b, "conv_transpose2d");
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(0) != xv.dim(1) || bv.size() != wv.dim(1)) {
        throw DimensionError("conv_transpose2d: incompatible shapes x" + shape_str(xv.shape()) + " w" +
                             shape_str(wv.shape()) + " b" + shape_str(bv.shape()));
    }
    // In adjoint terms the "image side" is this op's output.
    detail::ConvGeom geo{xv.dim(0), wv.dim(1), 0, 0, xv.dim(1), xv.dim(2), xv.dim(3), {wv.dim(2), wv.dim(3), stride, pad}};
    geo.h = conv_transpose_out_extent(geo.ho, geo.win.kh, stride, pad);
    geo.w = conv_transpose_out_extent(geo.wo, geo.win.kw, stride, pad);

    const std::size_t ckk = geo.ckk(), hw_small = geo.ho * geo.wo, hw_big = geo.h * geo.w;
    Tensor out({geo.n, geo.c, geo.h, geo.w});
    std::vector<double> col(ckk * hw_small);
    auto wm = detail::as_mat(wv, geo.o, ckk);
    detail::MatMap colm(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(hw_small));
    for (std::size_t i = 0; i < geo.n; ++i) {
        colm.noalias() = wm.transpose() * detail::as_mat(xv, geo.o, hw_small, i * geo.o * hw_small);
        double* dst = out.data().data() + i * geo.c * hw_big;
        detail::col2im(col.data(), geo.c, geo.h, geo.w, geo.win, geo.ho, geo.wo, dst);
        for (std::size_t oc = 0; oc < geo.c; ++oc) {
            for (std::size_t p = 0; p < hw_big; ++p) dst[oc * hw_big + p] += bv[oc];
        }
    }

    return x.graph->record("conv_transpose2d", std::move(out), {x, w, b}, [geo](Graph& g, std::size_t self) {
        const auto& ins = g.inputs(self);
        const Tensor& go = g.out_grad(self);
        const Tensor& xv = g.value(ins[0]);
        const Tensor& wv = g.value(ins[1]);
        const std::size_t ckk = geo.ckk(), hw_small = geo.ho * geo.wo, hw_big = geo.h * geo.w;
        const bool need_x = g.needs_grad(ins[0]);
        const bool need_w = g.needs_grad(ins[1]);
        const bool need_b = g.needs_grad(ins[2]);
        std::vector<double> col(ckk * hw_small);
        detail::MatMap colm(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(hw_small));
        auto wm = detail::as_mat(wv, geo.o, ckk);
        for (std::size_t i = 0; i < geo.n; ++i) {
            const double* gy = go.data().data() + i * geo.c * hw_big;
            if (need_x || need_w) {
                detail::im2col(gy, geo.c, geo.h, geo.w, geo.win, geo.ho, geo.wo, col.data());
            }
            if (need_x) {
                detail::as_mat(g.grad_buffer(ins[0]), geo.o, hw_small, i * geo.o * hw_small).noalias() += wm * colm;
            }
            if (need_w) {
                detail::as_mat(g.grad_buffer(ins[1]), geo.o, ckk).noalias() +=
                    detail::as_mat(xv, geo.o, hw_small, i * geo.o * hw_small) * colm.transpose();
            }
            if (need_b) {
                auto& gb = g.grad_buffer(ins[2]);
                for (std::size_t oc = 0; oc < geo.c; ++oc) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < hw_big; ++p) acc += gy[oc * hw_big + p];
                    gb[oc] += acc;
                }
            }
        }
    });
}

/// Max pooling without padding. The gradient goes to the first (row-major) argmax of each window.
inline Var maxpool2d(Var x, std::size_t k, std::size_t stride) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw DimensionError("maxpool2d expects N×C×H×W, got " + shape_str(xv.shape()));
    const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (k > h || k > w) throw ConfigError("maxpool2d: window " + std::to_string(k) + " larger than input");
    const std::size_t ho = conv_out_extent(h, k, stride, 0);
    const std::size_t wo = conv_out_extent(w, k, stride, 0);
    Tensor out({n, c, ho, wo});
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t p = 0; p < n * c; ++p) {
        const double* src = xv.data().data() + p * h * w;
        for (std::size_t oi = 0; oi < ho; ++oi) {
            for (std::size_t oj = 0; oj < wo; ++oj) {
                std::size_t best = (oi * stride) * w + oj * stride;
                for (std::size_t ki = 0; ki < k; ++ki) {
                    for (std::size_t kj = 0; kj < k; ++kj) {
                        const std::size_t idx = (oi * stride + ki) * w + oj * stride + kj;
                        if (src[idx] > src[best]) best = idx;
                    }
                }
                const std::size_t o = (p * ho + oi) * wo + oj;
                out[o] = src[best];
                argmax[o] = p * h * w + best;
            }
        }
    }
    return x.graph->record("maxpool2d", std::move(out), {x}, [argmax = std::move(argmax)](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        auto& gi = g.grad_buffer(g.inputs(self)[0]);
        for (std::size_t o = 0; o < go.size(); ++o) gi[argmax[o]] += go[o];
    });
}

/// Mean over the spatial extent: [N×C×H×W] → [N×C].
inline Var global_avg_pool(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw DimensionError("global_avg_pool expects N×C×H×W, got " + shape_str(xv.shape()));
    const std::size_t planes = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor out({xv.dim(0), xv.dim(1)});
    for (std::size_t p = 0; p < planes; ++p) {
        double acc = 0.0;
        for (std::size_t q = 0; q < hw; ++q) acc += xv[p * hw + q];
        out[p] = acc / static_cast<double>(hw);
    }
    return x.graph->record("global_avg_pool", std::move(out), {x}, [planes, hw](Graph& g, std::size_t self) {
        const Tensor& go = g.out_grad(self);
        auto& gi = g.grad_buffer(g.inputs(self)[0]);
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t q = 0; q < hw; ++q) gi[p * hw + q] += go[p] * inv;
        }
    });
}

} // namespace zsinv::ad
