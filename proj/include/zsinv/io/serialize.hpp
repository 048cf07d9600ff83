// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "zsinv/dataset.hpp"
#include "zsinv/dci.hpp"
#include "zsinv/io/checkpoint.hpp"
#include "zsinv/network.hpp"

namespace zsinv::io {

// ---------------------------------------------------------------------------
// Enum names
// ---------------------------------------------------------------------------

template <class E, std::size_t N>
E enum_from(const std::string& s, const E (&all)[N], const char* what) {
    for (E e : all)
        if (s == net::to_string(e)) return e;
    throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

inline net::LayerKind layer_kind_from(const std::string& s) {
    using K = net::LayerKind;
    static constexpr K all[] = {K::conv, K::conv_transpose, K::dense, K::maxpool, K::global_avg_pool, K::flatten, K::reshape};
    return enum_from(s, all, "layer kind");
}

inline net::Activation activation_from(const std::string& s) {
    using A = net::Activation;
    static constexpr A all[] = {A::none, A::relu, A::leaky_relu, A::sigmoid};
    return enum_from(s, all, "activation");
}

// ---------------------------------------------------------------------------
// NetworkSpec
// ---------------------------------------------------------------------------

inline json spec_to_json(const net::NetworkSpec& s) {
    json layers = json::array();
    for (const auto& l : s.layers) {
        layers.push_back({{"kind", net::to_string(l.kind)},
                          {"in", l.in_channels},
                          {"out", l.out_channels},
                          {"kernel", l.kernel},
                          {"stride", l.stride},
                          {"pad", l.pad},
                          {"activation", net::to_string(l.activation)},
                          {"slope", l.slope},
                          {"bn", l.has_bn},
                          {"target_shape", l.target_shape}});
    }
    return {{"name", s.name},
            {"input_shape", s.input_shape},
            {"layers", layers},
            {"block_ends", s.block_ends},
            {"clamp_output", s.clamp_output}};
}

inline net::NetworkSpec spec_from_json(const json& j) {
    try {
        net::NetworkSpec s;
        s.name = j.at("name").get<std::string>();
        s.input_shape = j.at("input_shape").get<Shape>();
        for (const auto& l : j.at("layers")) {
            net::LayerSpec ls;
            ls.kind = layer_kind_from(l.at("kind").get<std::string>());
            ls.in_channels = l.at("in").get<std::size_t>();
            ls.out_channels = l.at("out").get<std::size_t>();
            ls.kernel = l.at("kernel").get<std::size_t>();
            ls.stride = l.at("stride").get<std::size_t>();
            ls.pad = l.at("pad").get<std::size_t>();
            ls.activation = activation_from(l.at("activation").get<std::string>());
            ls.slope = l.at("slope").get<double>();
            ls.has_bn = l.at("bn").get<bool>();
            ls.target_shape = l.at("target_shape").get<Shape>();
            s.layers.push_back(ls);
        }
        s.block_ends = j.at("block_ends").get<std::vector<std::size_t>>();
        s.clamp_output = j.at("clamp_output").get<bool>();
        net::validate(s);
        return s;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed network spec: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

inline void put_params(Checkpoint& ck, const net::ParamStore& ps, const std::string& prefix = "") {
    for (const auto& [k, t] : ps.tensors) ck.tensors[prefix + "param/" + k] = t;
    for (const auto& [k, rs] : ps.running) {
        ck.tensors[prefix + "running/" + k + "/mean"] = rs.mean;
        ck.tensors[prefix + "running/" + k + "/var"] = rs.var;
    }
}

/// Parameters for `spec`, checked name by name and shape by shape against a
/// fresh initialisation.
inline net::ParamStore get_params(const Checkpoint& ck, const net::NetworkSpec& spec, const std::string& prefix = "") {
    net::ParamStore ps = net::init_params(spec, 0);
    auto take = [&](const std::string& name, Tensor& dst) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw IoError("checkpoint lacks tensor " + name);
        if (it->second.shape() != dst.shape()) {
            throw IoError("tensor " + name + " has shape " + shape_str(it->second.shape()) + ", spec needs " + shape_str(dst.shape()));
        }
        dst = it->second;
    };
    for (auto& [k, t] : ps.tensors) take(prefix + "param/" + k, t);
    for (auto& [k, rs] : ps.running) {
        take(prefix + "running/" + k + "/mean", rs.mean);
        take(prefix + "running/" + k + "/var", rs.var);
    }
    return ps;
}

inline const std::string& require_kind(const Checkpoint& ck, const std::string& kind) {
    const auto& k = ck.meta.at("kind").get_ref<const std::string&>();
    if (k != kind) throw IoError("checkpoint holds a " + k + ", expected a " + kind);
    return k;
}

// ---------------------------------------------------------------------------
// Objects
// ---------------------------------------------------------------------------

struct NetworkCheckpoint {
    net::NetworkSpec spec;
    net::ParamStore params;
};

inline Checkpoint network_checkpoint(const net::NetworkSpec& spec, const net::ParamStore& ps, json extra = json::object()) {
    Checkpoint ck;
    ck.meta = std::move(extra);
    ck.meta["kind"] = "network";
    ck.meta["spec"] = spec_to_json(spec);
    put_params(ck, ps);
    return ck;
}

inline NetworkCheckpoint network_from(const Checkpoint& ck) {
    require_kind(ck, "network");
    NetworkCheckpoint n;
    n.spec = spec_from_json(ck.meta.at("spec"));
    n.params = get_params(ck, n.spec);
    return n;
}

inline const char* to_string(data::Provenance p) { return p == data::Provenance::real ? "real" : "synthetic"; }

inline Checkpoint dataset_checkpoint(const data::Dataset& d, json extra = json::object()) {
    Checkpoint ck;
    ck.meta = std::move(extra);
    ck.meta["kind"] = "dataset";
    ck.meta["provenance"] = to_string(d.provenance());
    ck.meta["labels"] = d.labels();
    ck.tensors["images"] = d.images();
    return ck;
}

inline data::Dataset dataset_from(const Checkpoint& ck) {
    require_kind(ck, "dataset");
    const auto prov = ck.meta.at("provenance").get<std::string>();
    if (prov != "real" && prov != "synthetic") throw IoError("unknown provenance '" + prov + "'");
    auto it = ck.tensors.find("images");
    if (it == ck.tensors.end()) throw IoError("dataset checkpoint lacks images");
    return data::Dataset(it->second, ck.meta.at("labels").get<std::vector<std::size_t>>(),
                         prov == "real" ? data::Provenance::real : data::Provenance::synthetic);
}

inline json breakdown_to_json(const dci::LossBreakdown& b) {
    return {{"stage", b.stage}, {"iter", b.iter},   {"phase", dci::to_string(b.phase)},
            {"layer", b.layer}, {"img", b.img},     {"cyc", b.cyc},
            {"alpha", b.alpha}, {"total", b.total}};
}

inline dci::Phase phase_from(const std::string& s) {
    for (auto p : {dci::Phase::module, dci::Phase::finetune, dci::Phase::end_to_end})
        if (s == dci::to_string(p)) return p;
    throw IoError("unknown phase '" + s + "'");
}

inline dci::LossBreakdown breakdown_from(const json& j) {
    dci::LossBreakdown b;
    b.stage = j.at("stage").get<std::size_t>();
    b.iter = j.at("iter").get<std::size_t>();
    b.phase = phase_from(j.at("phase").get<std::string>());
    b.layer = j.at("layer").get<double>();
    b.img = j.at("img").get<double>();
    b.cyc = j.at("cyc").get<double>();
    b.alpha = j.at("alpha").get<double>();
    b.total = j.at("total").get<double>();
    return b;
}

/// Inversion model plus its per-stage logs (enough to resume run_dci).
inline Checkpoint inversion_checkpoint(const dci::DciResult& r, json extra = json::object()) {
    Checkpoint ck;
    ck.meta = std::move(extra);
    ck.meta["kind"] = "inversion";
    ck.meta["spec"] = spec_to_json(r.model.spec);
    ck.meta["trained_up_to"] = r.model.trained_up_to;
    json stages = json::array();
    for (const auto& s : r.stages) {
        json recs = json::array();
        for (const auto& b : s.records) recs.push_back(breakdown_to_json(b));
        stages.push_back({{"stage", s.stage}, {"alpha", s.alpha}, {"iterations", s.iterations}, {"records", recs}});
    }
    ck.meta["stages"] = stages;
    put_params(ck, r.model.params);
    return ck;
}

inline dci::DciResult inversion_from(const Checkpoint& ck) {
    require_kind(ck, "inversion");
    try {
        dci::DciResult r;
        r.model.spec = spec_from_json(ck.meta.at("spec"));
        r.model.params = get_params(ck, r.model.spec);
        r.model.trained_up_to = ck.meta.at("trained_up_to").get<std::size_t>();
        if (r.model.trained_up_to > r.model.depth()) throw IoError("inversion checkpoint: trained_up_to exceeds depth");
        for (const auto& s : ck.meta.at("stages")) {
            dci::StageLog log;
            log.stage = s.at("stage").get<std::size_t>();
            log.alpha = s.at("alpha").get<double>();
            log.iterations = s.at("iterations").get<std::size_t>();
            for (const auto& b : s.at("records")) log.records.push_back(breakdown_from(b));
            r.stages.push_back(std::move(log));
        }
        return r;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed inversion checkpoint: ") + e.what());
    }
}

} // namespace zsinv::io
