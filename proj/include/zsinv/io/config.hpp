// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "zsinv/eval.hpp"
#include "zsinv/io/checkpoint.hpp"
#include "zsinv/synthesis.hpp"
#include "zsinv/target_zoo.hpp"

namespace zsinv::io {

struct EvalConfig {
    std::size_t test_size = 64;   // held-out images per evaluation
    std::size_t depth = 4;        // inversion depth for attack / baseline-opt
    std::size_t gan_samples = 64;
    std::size_t interp_steps = 8;
    double inflate = 3.0;         // latent norm multiplier for reprojection

    void validate() const {
        if (test_size == 0 || gan_samples == 0) throw ConfigError("eval: test_size and gan_samples must be >= 1");
        if (depth == 0) throw ConfigError("eval: depth must be >= 1");
        if (interp_steps < 2) throw ConfigError("eval: interp_steps must be >= 2");
        if (!(inflate > 0)) throw ConfigError("eval: inflate must be > 0");
    }
};

/// Everything a CLI run needs. Per-module seeds are derived from `seed`, so
/// one number reproduces a run.
struct RunConfig {
    std::uint64_t seed = 0;
    zoo::ShapesConfig shapes;
    zoo::ClassifierConfig classifier;
    zoo::GeneratorConfig generator;
    std::size_t latent_dim = 32;
    synth::SynthesisConfig synthesis;
    dci::DciConfig dci;
    eval::AttackConfig attack;
    eval::InputOptConfig baseline;
    EvalConfig eval;

    /// Propagate `seed` into every module config.
    void derive_seeds() {
        shapes.seed = derive_seed(seed, {1});
        classifier.seed = derive_seed(seed, {2});
        generator.seed = derive_seed(seed, {3});
        synthesis.seed = derive_seed(seed, {4});
        dci.seed = derive_seed(seed, {5});
        attack.seed = derive_seed(seed, {6});
        baseline.seed = derive_seed(seed, {7});
    }

    void validate() const {
        shapes.validate();
        if (classifier.epochs == 0 || classifier.batch_size == 0 || !(classifier.lr > 0)) {
            throw ConfigError("classifier: epochs, batch_size >= 1 and lr > 0 required");
        }
        if (generator.iters == 0 || generator.batch_size == 0 || !(generator.lr > 0) || !(generator.lr_critic > 0)) {
            throw ConfigError("generator: iters, batch_size >= 1 and learning rates > 0 required");
        }
        if (latent_dim == 0) throw ConfigError("generator: latent_dim must be >= 1");
        synthesis.validate();
        dci.validate();
        attack.validate();
        if (!(baseline.lr > 0) || baseline.tv_weight < 0) throw ConfigError("baseline: lr > 0 and tv_weight >= 0 required");
        eval.validate();
    }
};

namespace detail {

/// Reads keys of one JSON object, tracks which were consumed and rejects
/// anything left over.
class Section {
public:
    Section(const json& j, std::string name) : name_(std::move(name)) {
        if (j.is_null()) return;
        if (!j.is_object()) throw ConfigError(name_ + ": expected an object");
        obj_ = &j;
    }

    template <class T>
    void get(const char* key, T& dst) {
        seen_.insert(key);
        if (obj_ == nullptr || !obj_->contains(key)) return;
        const json& v = obj_->at(key);
        const std::string where = name_ + "." + key;
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
            dst = v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
                throw ConfigError(where + ": expected a non-negative integer");
            }
            dst = v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where + ": expected a number");
            dst = v.get<T>();
        } else {
            if (!v.is_string()) throw ConfigError(where + ": expected a string");
            dst = v.get<T>();
        }
    }

    const json& sub(const char* key) {
        seen_.insert(key);
        static const json null;
        return obj_ != nullptr && obj_->contains(key) ? obj_->at(key) : null;
    }

    bool has(const char* key) const { return obj_ != nullptr && obj_->contains(key); }
    const json& raw(const char* key) {
        seen_.insert(key);
        return obj_->at(key);
    }

    void finish() const {
        if (obj_ == nullptr) return;
        for (const auto& [k, v] : obj_->items()) {
            if (!seen_.count(k)) throw ConfigError(name_ + ": unknown key '" + k + "'");
        }
    }

private:
    std::string name_;
    const json* obj_ = nullptr;
    std::set<std::string> seen_;
};

} // namespace detail

/// Strict parse: defaults for absent keys, errors for unknown keys, wrong
/// types and out-of-range values.
inline RunConfig config_from_json(const json& doc) {
    RunConfig c;
    detail::Section top(doc, "config");
    top.get("seed", c.seed);
    {
        detail::Section s(top.sub("shapes"), "shapes");
        s.get("channels", c.shapes.channels);
        s.get("size", c.shapes.size);
        s.get("train_per_class", c.shapes.train_per_class);
        s.get("val_per_class", c.shapes.val_per_class);
        s.get("intensity_min", c.shapes.intensity_min);
        s.get("intensity_max", c.shapes.intensity_max);
        s.get("extent_min", c.shapes.extent_min);
        s.get("extent_max", c.shapes.extent_max);
        s.finish();
    }
    {
        detail::Section s(top.sub("classifier"), "classifier");
        s.get("epochs", c.classifier.epochs);
        s.get("batch_size", c.classifier.batch_size);
        s.get("lr", c.classifier.lr);
        s.finish();
    }
    {
        detail::Section s(top.sub("generator"), "generator");
        std::string mode = c.generator.mode == zoo::GeneratorMode::gan ? "gan" : "decoder";
        s.get("mode", mode);
        if (mode != "gan" && mode != "decoder") throw ConfigError("generator.mode: expected \"gan\" or \"decoder\"");
        c.generator.mode = mode == "gan" ? zoo::GeneratorMode::gan : zoo::GeneratorMode::decoder;
        s.get("iters", c.generator.iters);
        s.get("batch_size", c.generator.batch_size);
        s.get("lr", c.generator.lr);
        s.get("lr_critic", c.generator.lr_critic);
        s.get("collapse_window", c.generator.collapse_window);
        s.get("collapse_threshold", c.generator.collapse_threshold);
        s.get("latent_dim", c.latent_dim);
        s.finish();
    }
    {
        detail::Section s(top.sub("synthesis"), "synthesis");
        s.get("batch_size", c.synthesis.batch_size);
        s.get("steps", c.synthesis.steps);
        s.get("lr", c.synthesis.lr);
        s.get("lr_min", c.synthesis.lr_min);
        s.get("restarts", c.synthesis.restarts);
        s.get("tv_weight", c.synthesis.tv_weight);
        s.get("ce_weight", c.synthesis.ce_weight);
        s.get("bn_weight", c.synthesis.bn_weight);
        s.get("set_size", c.synthesis.set_size);
        s.finish();
    }
    {
        detail::Section s(top.sub("dci"), "dci");
        if (s.has("alpha")) {
            const json& a = s.raw("alpha");
            if (a.is_string() && a.get<std::string>() == "auto") {
                c.dci.alpha.reset();
            } else if (a.is_number()) {
                c.dci.alpha = a.get<double>();
            } else {
                throw ConfigError("dci.alpha: expected \"auto\" or a number");
            }
        }
        s.get("alpha_ratio", c.dci.alpha_ratio);
        s.get("iters_per_module", c.dci.iters_per_module);
        s.get("iters_finetune", c.dci.iters_finetune);
        s.get("lr_module", c.dci.lr_module);
        s.get("lr_finetune", c.dci.lr_finetune);
        s.get("lr_min_ratio", c.dci.lr_min_ratio);
        s.get("restarts", c.dci.restarts);
        s.get("batch_size", c.dci.batch_size);
        s.get("log_every", c.dci.log_every);
        s.finish();
    }
    {
        detail::Section s(top.sub("attack"), "attack");
        s.get("eps", c.attack.eps);
        c.attack.step = c.attack.eps / 4.0;
        s.get("step", c.attack.step);
        s.get("steps", c.attack.steps);
        s.finish();
    }
    {
        detail::Section s(top.sub("baseline"), "baseline");
        s.get("steps", c.baseline.steps);
        s.get("lr", c.baseline.lr);
        s.get("tv_weight", c.baseline.tv_weight);
        s.finish();
    }
    {
        detail::Section s(top.sub("eval"), "eval");
        s.get("test_size", c.eval.test_size);
        s.get("depth", c.eval.depth);
        s.get("gan_samples", c.eval.gan_samples);
        s.get("interp_steps", c.eval.interp_steps);
        s.get("inflate", c.eval.inflate);
        s.finish();
    }
    top.finish();
    if (c.dci.log_every == 0) throw ConfigError("dci.log_every must be >= 1");
    c.derive_seeds();
    c.validate();
    return c;
}

inline RunConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = text.find_first_not_of(" \t\r\n") == std::string::npos ? json::object() : json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(doc);
}

inline RunConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

/// Every field, defaults included; parse(serialize(c)) == c.
inline json config_to_json(const RunConfig& c) {
    json alpha = c.dci.alpha ? json(*c.dci.alpha) : json("auto");
    return {
        {"seed", c.seed},
        {"shapes",
         {{"channels", c.shapes.channels},
          {"size", c.shapes.size},
          {"train_per_class", c.shapes.train_per_class},
          {"val_per_class", c.shapes.val_per_class},
          {"intensity_min", c.shapes.intensity_min},
          {"intensity_max", c.shapes.intensity_max},
          {"extent_min", c.shapes.extent_min},
          {"extent_max", c.shapes.extent_max}}},
        {"classifier", {{"epochs", c.classifier.epochs}, {"batch_size", c.classifier.batch_size}, {"lr", c.classifier.lr}}},
        {"generator",
         {{"mode", c.generator.mode == zoo::GeneratorMode::gan ? "gan" : "decoder"},
          {"iters", c.generator.iters},
          {"batch_size", c.generator.batch_size},
          {"lr", c.generator.lr},
          {"lr_critic", c.generator.lr_critic},
          {"collapse_window", c.generator.collapse_window},
          {"collapse_threshold", c.generator.collapse_threshold},
          {"latent_dim", c.latent_dim}}},
        {"synthesis",
         {{"batch_size", c.synthesis.batch_size},
          {"steps", c.synthesis.steps},
          {"lr", c.synthesis.lr},
          {"lr_min", c.synthesis.lr_min},
          {"restarts", c.synthesis.restarts},
          {"tv_weight", c.synthesis.tv_weight},
          {"ce_weight", c.synthesis.ce_weight},
          {"bn_weight", c.synthesis.bn_weight},
          {"set_size", c.synthesis.set_size}}},
        {"dci",
         {{"alpha", alpha},
          {"alpha_ratio", c.dci.alpha_ratio},
          {"iters_per_module", c.dci.iters_per_module},
          {"iters_finetune", c.dci.iters_finetune},
          {"lr_module", c.dci.lr_module},
          {"lr_finetune", c.dci.lr_finetune},
          {"lr_min_ratio", c.dci.lr_min_ratio},
          {"restarts", c.dci.restarts},
          {"batch_size", c.dci.batch_size},
          {"log_every", c.dci.log_every}}},
        {"attack", {{"eps", c.attack.eps}, {"step", c.attack.step}, {"steps", c.attack.steps}}},
        {"baseline", {{"steps", c.baseline.steps}, {"lr", c.baseline.lr}, {"tv_weight", c.baseline.tv_weight}}},
        {"eval",
         {{"test_size", c.eval.test_size},
          {"depth", c.eval.depth},
          {"gan_samples", c.eval.gan_samples},
          {"interp_steps", c.eval.interp_steps},
          {"inflate", c.eval.inflate}}},
    };
}

} // namespace zsinv::io
