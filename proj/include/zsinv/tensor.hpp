// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "zsinv/error.hpp"

namespace zsinv {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles.
///
/// A Tensor is a plain value: copying copies the data. Every constructor that
/// accepts external data rejects non-finite entries, so a Tensor observed
/// outside of a mutable data() span is always finite.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
        check_extents();
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (data_.size() != shape_numel(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
        }
        require_finite("tensor creation");
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        t.require_finite("tensor creation");
        return t;
    }

    static Tensor scalar(double value) { return Tensor(Shape{1}, {value}); }

    static Tensor normal(Shape shape, double mean, double stddev, std::mt19937_64& rng) {
        Tensor t(std::move(shape));
        std::normal_distribution<double> dist(mean, stddev);
        for (auto& v : t.data_) v = dist(rng);
        return t;
    }

    static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<double> dist(lo, hi);
        for (auto& v : t.data_) v = dist(rng);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    double item() const {
        if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    /// Reinterpret the extents; the element count must not change.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    /// Items [begin, end) along the leading axis.
    Tensor slice_rows(std::size_t begin, std::size_t end) const {
        if (rank() == 0 || begin > end || end > shape_[0]) {
            throw DimensionError("slice_rows out of range for shape " + shape_str(shape_));
        }
        const std::size_t stride = data_.size() / shape_[0];
        Shape s = shape_;
        s[0] = end - begin;
        Tensor t;
        t.shape_ = std::move(s);
        t.data_.assign(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                       data_.begin() + static_cast<std::ptrdiff_t>(end * stride));
        return t;
    }

    /// Gather items along the leading axis.
    Tensor gather_rows(std::span<const std::size_t> rows) const {
        if (rank() == 0) throw DimensionError("gather_rows on rank-0 tensor");
        const std::size_t stride = data_.size() / shape_[0];
        Shape s = shape_;
        s[0] = rows.size();
        Tensor t(std::move(s));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] >= shape_[0]) throw DimensionError("gather_rows index out of range");
            std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * stride), stride,
                        t.data_.begin() + static_cast<std::ptrdiff_t>(i * stride));
        }
        return t;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    void require_finite(std::string_view where, std::string_view what = {}) const {
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (!std::isfinite(data_[i])) {
                throw NumericError("non-finite value at flat index " + std::to_string(i) + " in " + std::string(where) +
                                   std::string(what));
            }
        }
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_extents() const {
        for (auto e : shape_) {
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<double> data_;
};

/// Concatenate tensors along the leading axis; trailing extents must agree.
inline Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_rows of nothing");
    Shape s = parts[0].shape();
    std::size_t rows = 0;
    std::vector<double> data;
    for (const auto& p : parts) {
        if (p.rank() != s.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), s.begin() + 1)) {
            throw DimensionError("concat_rows trailing extents differ");
        }
        rows += p.dim(0);
        data.insert(data.end(), p.data().begin(), p.data().end());
    }
    s[0] = rows;
    return Tensor(std::move(s), std::move(data));
}

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("dot: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace zsinv
