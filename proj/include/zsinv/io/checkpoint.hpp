// SPDX-License-Identifier: Apache-2.0
#pragma once

// Container layout:
//   "ZSIVCKPT" | u32 LE version | u64 LE metadata length | metadata JSON |
//   payload of row-major f64 LE values.
// Metadata is {"meta": <caller document>, "tensors": [{name, shape, offset,
// bytes}]}, offsets relative to the payload start, tensors in name order.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <string_view>

#include <json.hpp>

#include "zsinv/io/fs.hpp"
#include "zsinv/tensor.hpp"

namespace zsinv::io {

using json = nlohmann::json;

inline constexpr std::string_view kMagic = "ZSIVCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    json meta = json::object();
    std::map<std::string, Tensor> tensors;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(std::string_view in, std::size_t pos, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t(static_cast<unsigned char>(in[pos + std::size_t(i)])) << (8 * i);
    return v;
}

} // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    json table = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ck.tensors) {
        const std::uint64_t bytes = std::uint64_t(t.size()) * 8;
        table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes}});
        offset += bytes;
    }
    const std::string doc = json{{"meta", ck.meta}, {"tensors", table}}.dump();
    std::string out(kMagic);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, doc.size());
    out += doc;
    out.reserve(out.size() + offset);
    for (const auto& [name, t] : ck.tensors) {
        for (double v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

inline Checkpoint decode_checkpoint(std::string_view in, const std::string& what = "checkpoint") {
    constexpr std::size_t head = 8 + 4 + 8;
    if (in.size() < head || in.substr(0, 8) != kMagic) throw IoError(what + ": bad magic, not a checkpoint");
    const auto version = std::uint32_t(detail::get_le(in, 8, 4));
    if (version != kCheckpointVersion) {
        throw IoError(what + ": checkpoint version " + std::to_string(version) + ", this build reads version " +
                      std::to_string(kCheckpointVersion));
    }
    const std::uint64_t meta_len = detail::get_le(in, 12, 8);
    if (meta_len > in.size() - head) throw IoError(what + ": truncated metadata");
    json doc;
    try {
        doc = json::parse(in.substr(head, meta_len));
    } catch (const json::exception& e) {
        throw IoError(what + ": unreadable metadata (" + e.what() + ")");
    }
    const std::string_view payload = in.substr(head + meta_len);
    Checkpoint ck;
    try {
        ck.meta = doc.at("meta");
        struct Entry {
            std::uint64_t offset, bytes;
            std::string name;
        };
        std::vector<Entry> entries;
        for (const auto& e : doc.at("tensors")) {
            Shape shape = e.at("shape").get<Shape>();
            const auto offset = e.at("offset").get<std::uint64_t>();
            const auto bytes = e.at("bytes").get<std::uint64_t>();
            const auto name = e.at("name").get<std::string>();
            const std::size_t n = shape_numel(shape);
            if (bytes != std::uint64_t(n) * 8) throw IoError(what + ": tensor " + name + " size does not match its shape");
            if (offset > payload.size() || bytes > payload.size() - offset) {
                throw IoError(what + ": tensor " + name + " lies outside the payload (truncated file?)");
            }
            Tensor t(shape);
            for (std::size_t i = 0; i < n; ++i) t[i] = std::bit_cast<double>(detail::get_le(payload, offset + 8 * i, 8));
            if (!ck.tensors.emplace(name, std::move(t)).second) throw IoError(what + ": duplicate tensor " + name);
            entries.push_back({offset, bytes, name});
        }
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
        std::uint64_t end = 0;
        for (const auto& e : entries) {
            if (e.offset < end) throw IoError(what + ": tensor " + e.name + " overlaps another");
            end = e.offset + e.bytes;
        }
        if (end != payload.size()) throw IoError(what + ": payload has " + std::to_string(payload.size() - end) + " unclaimed bytes");
    } catch (const json::exception& e) {
        throw IoError(what + ": malformed tensor table (" + e.what() + ")");
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const fs::path& path) { write_file_atomic(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("no checkpoint at " + path.string());
    return decode_checkpoint(read_file(path), path.string());
}

} // namespace zsinv::io
