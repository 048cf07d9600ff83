// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "zsinv/tensor.hpp"

namespace zsinv::data {

enum class Provenance { real, synthetic };

/// Count of accesses to real-image pixels since the last reset. Lets tests
/// prove a pipeline stage never looked at real data.
inline std::atomic<std::uint64_t>& real_data_reads() {
    static std::atomic<std::uint64_t> n{0};
    return n;
}

/// Images [N×C×H×W] in [0,1] with integer labels.
class Dataset {
public:
    Dataset() = default;
    Dataset(Tensor images, std::vector<std::size_t> labels, Provenance p)
        : images_(std::move(images)), labels_(std::move(labels)), prov_(p) {
        if (images_.rank() != 4) throw DimensionError("dataset images must be N×C×H×W, got " + shape_str(images_.shape()));
        if (!labels_.empty() && labels_.size() != images_.dim(0)) throw DimensionError("dataset label count mismatch");
    }

    const Tensor& images() const {
        if (prov_ == Provenance::real) ++real_data_reads();
        return images_;
    }
    const std::vector<std::size_t>& labels() const { return labels_; }
    Provenance provenance() const { return prov_; }
    std::size_t size() const { return images_.size() == 0 ? 0 : images_.dim(0); }
    Shape item_shape() const { return {images_.dim(1), images_.dim(2), images_.dim(3)}; }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.prov_ == b.prov_ && a.labels_ == b.labels_ && a.images_ == b.images_;
    }

private:
    Tensor images_;
    std::vector<std::size_t> labels_;
    Provenance prov_ = Provenance::real;
};

} // namespace zsinv::data
