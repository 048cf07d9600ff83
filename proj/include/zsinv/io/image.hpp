// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "zsinv/io/fs.hpp"
#include "zsinv/tensor.hpp"

namespace zsinv::io {

/// round(255·clamp(v,0,1)), halves rounded up.
inline std::uint8_t pixel_byte(double v) {
    if (std::isnan(v)) throw NumericError("export_image: NaN pixel");
    return std::uint8_t(std::floor(255.0 * std::clamp(v, 0.0, 1.0) + 0.5));
}

/// Binary PGM (C=1) or PPM (C=3) bytes for a C×H×W tensor.
inline std::string encode_pnm(const Tensor& x) {
    if (x.rank() != 3) throw DimensionError("export_image: expected C×H×W, got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (c != 1 && c != 3) throw DimensionError("export_image: " + std::to_string(c) + " channels, only 1 or 3 supported");
    std::string out = std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + c * h * w);
    for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) out.push_back(char(pixel_byte(x[ch * h * w + i])));
    return out;
}

inline void export_image(const Tensor& x, const fs::path& path) { write_file_atomic(path, encode_pnm(x)); }

/// Tile N×C×H×W images into one C×(rows·(H+pad)−pad)×(cols·(W+pad)−pad)
/// canvas, row-major, gaps filled with `fill`.
inline Tensor image_grid(const Tensor& batch, std::size_t cols, std::size_t pad = 1, double fill = 1.0) {
    if (batch.rank() != 4) throw DimensionError("image_grid: expected N×C×H×W");
    if (cols == 0) throw ConfigError("image_grid: cols must be >= 1");
    const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    cols = std::min(cols, std::max<std::size_t>(n, 1));
    const std::size_t rows = (n + cols - 1) / cols;
    const std::size_t H = rows * (h + pad) - pad, W = cols * (w + pad) - pad;
    Tensor g = Tensor::full({c, H, W}, fill);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t oy = (i / cols) * (h + pad), ox = (i % cols) * (w + pad);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) g[(ch * H + oy + y) * W + ox + x] = batch[((i * c + ch) * h + y) * w + x];
    }
    return g;
}

} // namespace zsinv::io
