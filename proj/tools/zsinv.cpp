// SPDX-License-Identifier: Apache-2.0
// zsinv: command-line driver for data generation, target training,
// synthesis, inversion training and evaluation.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zsinv/eval.hpp"
#include "zsinv/io/config.hpp"
#include "zsinv/io/image.hpp"
#include "zsinv/io/manifest.hpp"
#include "zsinv/io/serialize.hpp"
#include "zsinv/synthesis.hpp"
#include "zsinv/target_zoo.hpp"

using namespace zsinv;
using io::json;
namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config, out, resume;
    std::optional<std::uint64_t> seed;
    std::string target, data, inversion, generator;
    std::size_t depth = 0;
    std::size_t count = 64, cols = 8;
    bool end_to_end = false;
};

/// State shared by every subcommand: resolved config, manifest, output dir.
class Run {
public:
    io::RunConfig cfg;
    io::RunManifest man;
    fs::path out;

    Run(const std::string& command, std::vector<std::string> args, const Options& o) : out(o.out) {
        if (!o.config.empty()) cfg = io::load_config(o.config);
        if (o.seed) cfg.seed = *o.seed;
        cfg.derive_seeds();
        cfg.validate();
        man.command = command;
        man.args = std::move(args);
        man.config = io::config_to_json(cfg);
        man.seed = cfg.seed;
        man.stage("start");
        fs::create_directories(out);
        save_manifest();
    }

    void save_manifest() const { man.save(out / "manifest.json"); }
    void stage(const std::string& name) {
        man.stage(name);
        save_manifest();
    }

    io::Checkpoint load(const std::string& path) {
        if (path.empty()) throw UsageError(man.command + ": missing required input");
        auto ck = io::load_checkpoint(path);
        man.add_input(path);
        save_manifest();
        return ck;
    }

    json stamp(json meta = json::object()) const {
        meta["run_id"] = man.run_id();
        meta["command"] = man.command;
        return meta;
    }

    void save(io::Checkpoint ck, const std::string& name) {
        ck.meta["run_id"] = man.run_id();
        ck.meta["command"] = man.command;
        io::save_checkpoint(ck, out / name);
        add_output(name);
    }

    void image(const Tensor& x, const std::string& name) {
        io::export_image(x, out / name);
        add_output(name);
    }

    /// Line-delimited report; the first record names the run.
    void report(const std::vector<json>& records, const std::string& name = "report.jsonl") {
        std::string text = stamp({{"record", "header"}}).dump() + "\n";
        for (const auto& r : records) text += r.dump() + "\n";
        io::write_file_atomic(out / name, text);
        add_output(name);
    }

    void add_output(const std::string& name) {
        if (std::find(man.outputs.begin(), man.outputs.end(), name) == man.outputs.end()) man.outputs.push_back(name);
        save_manifest();
    }
};

struct LoadedNet {
    io::NetworkCheckpoint net;
    dci::Target target() const { return {&net.spec, &net.params}; }
    bool is_generator() const { return net.spec.input_shape.size() == 1; }
};

LoadedNet load_net(Run& r, const std::string& path) {
    LoadedNet n;
    n.net = io::network_from(r.load(path));
    return n;
}

dci::InversionModel load_inversion(Run& r, const std::string& path, const LoadedNet& t) {
    auto res = io::inversion_from(r.load(path));
    if (res.model.spec != net::mirror_spec(t.net.spec)) throw ConfigError("inversion checkpoint does not mirror the given target");
    return res.model;
}

json summary_json(const eval::Summary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

json metrics_json(const eval::MetricsReport& m) {
    return {{"psnr", summary_json(m.psnr_summary)}, {"cycle_distance", summary_json(m.cycle_summary)}, {"note", m.note}};
}

json sign_json(const eval::SignTest& s) {
    return {{"positive", s.positive}, {"negative", s.negative}, {"p_greater", s.p_greater}, {"p_two_sided", s.p_two_sided}};
}

Tensor head(const data::Dataset& d, std::size_t n) { return d.images().slice_rows(0, std::min(n, d.size())); }

std::vector<std::size_t> head_labels(const data::Dataset& d, std::size_t n) {
    const auto& l = d.labels();
    return {l.begin(), l.begin() + std::ptrdiff_t(std::min(n, l.size()))};
}

std::size_t pick_depth(const Options& o, std::size_t fallback, const dci::InversionModel& inv) {
    const std::size_t k = o.depth ? o.depth : fallback;
    if (k < 1 || k > inv.trained_up_to) {
        throw ConfigError("depth " + std::to_string(k) + " not trained (inversion covers 1.." + std::to_string(inv.trained_up_to) + ")");
    }
    return k;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void cmd_gen_data(Run& r, const Options&) {
    auto d = zoo::gen_shapes(r.cfg.shapes);
    r.stage("generated");
    r.save(io::dataset_checkpoint(d.train, {{"split", "train"}}), "train.ckpt");
    r.save(io::dataset_checkpoint(d.val, {{"split", "val"}}), "val.ckpt");
    std::cout << "train " << d.train.size() << " val " << d.val.size() << "\n";
}

void cmd_train_target(Run& r, const Options& o) {
    if (o.data.empty()) throw UsageError("train-target: --data DIR (output of gen-data) is required");
    zoo::ShapesData d{io::dataset_from(r.load((fs::path(o.data) / "train.ckpt").string())),
                      io::dataset_from(r.load((fs::path(o.data) / "val.ckpt").string()))};
    const auto shape = d.train.item_shape();
    auto spec = zoo::micro_vgg_spec(shape[0], shape[1]);
    zoo::ClassifierReport rep;
    auto ps = zoo::train_classifier(spec, d, r.cfg.classifier, &rep);
    r.stage("trained");
    r.save(io::network_checkpoint(spec, ps, {{"val_accuracy", rep.val_accuracy}}), "target.ckpt");
    std::vector<json> recs;
    for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e)
        recs.push_back({{"record", "epoch"}, {"epoch", e + 1}, {"loss", rep.epoch_loss[e]}, {"val_accuracy", rep.epoch_val_accuracy[e]}});
    r.report(recs);
    std::cout << "val_accuracy " << rep.val_accuracy << "\n";
}

void cmd_train_gan(Run& r, const Options& o) {
    auto d = io::dataset_from(r.load(o.data));
    const auto shape = d.item_shape();
    auto spec = zoo::micro_gen_spec(r.cfg.latent_dim, shape[0]);
    zoo::GeneratorReport rep;
    std::vector<json> recs;
    auto ps = zoo::train_generator(spec, d, r.cfg.generator, &rep, [&](const std::string& ev, const auto& fields) {
        json j{{"record", ev}};
        for (const auto& [k, v] : fields) j[k] = v;
        recs.push_back(j);
    });
    r.stage("trained");
    if (rep.collapse_warning) std::cerr << "warning: generator loss flat over the last window; possible collapse\n";
    r.save(io::network_checkpoint(spec, ps,
                                  {{"mode", zoo::to_string(rep.mode)},
                                   {"final_loss", rep.final_loss},
                                   {"final_critic_loss", rep.final_critic_loss},
                                   {"collapse_warning", rep.collapse_warning}}),
           "generator.ckpt");
    dci::Target g{&spec, &ps};
    r.image(io::image_grid(eval::generate(g, zoo::sample_latent(r.cfg.latent_dim, 16, derive_seed(r.cfg.seed, {8}))), 4),
            shape[0] == 1 ? "samples.pgm" : "samples.ppm");
    r.report(recs);
    std::cout << "mode " << zoo::to_string(rep.mode) << " final_loss " << rep.final_loss << "\n";
}

void cmd_synthesize(Run& r, const Options& o) {
    auto t = load_net(r, o.target);
    if (t.is_generator()) throw ConfigError("synthesize: target must be a classifier");
    std::vector<json> recs;
    auto set = synth::build_synthetic_set(t.net.spec, t.net.params, r.cfg.synthesis, [&](const synth::SynthesisBatch& b) {
        recs.push_back({{"record", "batch"},
                        {"batch", b.batch_index},
                        {"initial", {{"ce", b.initial.ce}, {"bn", b.initial.bn}, {"tv", b.initial.tv}, {"total", b.initial.total}}},
                        {"final", {{"ce", b.final.ce}, {"bn", b.final.bn}, {"tv", b.final.tv}, {"total", b.final.total}}}});
    });
    r.stage("synthesized");
    const double acc = zoo::accuracy(t.net.spec, t.net.params, set.data.images(), set.data.labels());
    recs.push_back({{"record", "summary"}, {"size", set.data.size()}, {"target_accuracy", acc}});
    r.save(io::dataset_checkpoint(set.data), "synthetic.ckpt");
    r.report(recs);
    std::cout << "synthesized " << set.data.size() << " target_accuracy " << acc << "\n";
}

void cmd_invert_train(Run& r, const Options& o) {
    auto t = load_net(r, o.target);
    std::optional<data::Dataset> d;
    dci::DataSource src = dci::DataSource::from_latents();
    if (t.is_generator()) {
        if (!o.data.empty()) throw UsageError("invert-train: generator targets train on sampled latents; drop --data");
    } else {
        d = io::dataset_from(r.load(o.data));
        src = dci::DataSource::from_images(*d);
    }
    const std::size_t k = o.depth ? o.depth : t.net.spec.num_blocks();
    std::optional<dci::DciResult> resume;
    if (!o.resume.empty()) {
        if (o.end_to_end) throw UsageError("invert-train: --resume applies to divide-and-conquer training only");
        resume = io::inversion_from(r.load(o.resume));
    }
    json meta{{"data", t.is_generator() ? "latent" : io::to_string(d->provenance())}, {"end_to_end", o.end_to_end}};
    io::JsonlLog log(r.out / "train_log.jsonl");
    r.add_output("train_log.jsonl");
    auto on_log = [&](const dci::LossBreakdown& b) { log.write(io::breakdown_to_json(b)); };
    dci::DciResult res;
    if (o.end_to_end) {
        res = dci::train_end_to_end_baseline(t.target(), src, r.cfg.dci, k, on_log);
    } else {
        res = dci::run_dci(t.target(), src, r.cfg.dci, k, resume,
                           [&](const dci::DciResult& partial) {
                               r.save(io::inversion_checkpoint(partial, meta), "inversion.ckpt");
                               r.stage("stage " + std::to_string(partial.model.trained_up_to));
                           },
                           on_log);
    }
    r.save(io::inversion_checkpoint(res, meta), "inversion.ckpt");
    r.stage("trained");
    std::cout << "trained_up_to " << res.model.trained_up_to << "\n";
}

void cmd_invert_run(Run& r, const Options& o) {
    // load the inversion first: running it before training is the common mistake
    if (o.inversion.empty()) throw UsageError("invert-run: --inversion is required");
    auto ck = r.load(o.inversion);
    auto t = load_net(r, o.target);
    auto inv = io::inversion_from(ck).model;
    if (inv.spec != net::mirror_spec(t.net.spec)) throw ConfigError("inversion checkpoint does not mirror the given target");
    auto d = io::dataset_from(r.load(o.data));
    const Tensor x = head(d, r.cfg.eval.test_size);
    const std::string ext = x.dim(1) == 1 ? ".pgm" : ".ppm";
    if (t.is_generator()) {
        const Tensor z_hat = dci::invert(inv, x, t.net.spec.num_blocks());
        const Tensor xr = eval::generate(t.target(), z_hat);
        io::Checkpoint out;
        out.meta = {{"kind", "latents"}};
        out.tensors["z_hat"] = z_hat;
        r.save(out, "latents.ckpt");
        r.image(io::image_grid(concat_rows(std::vector<Tensor>{x.slice_rows(0, std::min<std::size_t>(8, x.dim(0))),
                                                               xr.slice_rows(0, std::min<std::size_t>(8, x.dim(0)))}),
                               std::min<std::size_t>(8, x.dim(0))),
                "reprojection" + ext);
        r.report({{{"record", "latent"}, {"n", x.dim(0)}, {"image_l1", eval::mean_l1(xr, x)}}});
        std::cout << "image_l1 " << eval::mean_l1(xr, x) << "\n";
        return;
    }
    const std::size_t k = pick_depth(o, inv.trained_up_to, inv);
    const Tensor xp = dci::invert(inv, net::forward_full(t.net.spec, t.net.params, x)[k], k);
    auto m = eval::metrics(t.target(), x, xp);
    r.stage("inverted");
    r.save(io::dataset_checkpoint(data::Dataset(xp, head_labels(d, x.dim(0)), data::Provenance::synthetic), {{"depth", k}}),
           "reconstructions.ckpt");
    const std::size_t show = std::min<std::size_t>(8, x.dim(0));
    r.image(io::image_grid(concat_rows(std::vector<Tensor>{x.slice_rows(0, show), xp.slice_rows(0, show)}), show), "comparison" + ext);
    json rec = metrics_json(m);
    rec["record"] = "metrics";
    rec["depth"] = k;
    rec["n"] = x.dim(0);
    r.report({rec});
    std::cout << "depth " << k << " psnr " << m.psnr_summary.mean << "\n";
}

void cmd_sweep(Run& r, const Options& o) {
    auto t = load_net(r, o.target);
    if (t.is_generator()) throw ConfigError("sweep: target must be a classifier");
    auto inv = load_inversion(r, o.inversion, t);
    auto d = io::dataset_from(r.load(o.data));
    std::vector<std::pair<std::size_t, const dci::InversionModel*>> models;
    for (std::size_t k = 1; k <= inv.trained_up_to; ++k) models.emplace_back(k, &inv);
    auto rows = eval::depth_sweep(t.target(), models, head(d, r.cfg.eval.test_size));
    r.stage("evaluated");
    std::vector<json> recs;
    for (const auto& row : rows) {
        json j = metrics_json(row.report);
        j["record"] = "depth";
        j["depth"] = row.depth;
        recs.push_back(j);
        std::cout << "depth " << row.depth << " psnr " << row.report.psnr_summary.mean << " cycle " << row.report.cycle_summary.mean << "\n";
    }
    r.report(recs);
}

void cmd_attack(Run& r, const Options& o) {
    auto t = load_net(r, o.target);
    auto inv = load_inversion(r, o.inversion, t);
    auto d = io::dataset_from(r.load(o.data));
    const std::size_t k = pick_depth(o, r.cfg.eval.depth, inv);
    auto g = eval::adversarial_gap(t.target(), inv, head(d, r.cfg.eval.test_size), head_labels(d, r.cfg.eval.test_size), k, r.cfg.attack);
    r.stage("evaluated");
    r.report({{{"record", "gap"},
               {"eps", g.eps},
               {"depth", g.depth},
               {"n", g.random.psnr.size()},
               {"random", metrics_json(g.random)},
               {"adversarial", metrics_json(g.adversarial)},
               {"sign_test_random_minus_adversarial", sign_json(g.test)},
               {"cross_entropy", {{"clean", g.ce_clean}, {"random", g.ce_random}, {"adversarial", g.ce_adversarial}}}},
              {{"record", "per_image"}, {"psnr_random", g.random.psnr}, {"psnr_adversarial", g.adversarial.psnr}}});
    std::cout << "random " << g.random.psnr_summary.mean << " adversarial " << g.adversarial.psnr_summary.mean << " p "
              << g.test.p_greater << "\n";
}

void cmd_gan_eval(Run& r, const Options& o) {
    auto gnet = load_net(r, o.generator);
    if (!gnet.is_generator()) throw ConfigError("gan-eval: --generator must hold a generator network");
    auto inv = load_inversion(r, o.inversion, gnet);
    if (inv.trained_up_to != gnet.net.spec.num_blocks()) throw ConfigError("gan-eval: inversion must cover every generator block");
    const auto g = gnet.target();
    const std::size_t n = r.cfg.eval.gan_samples, d = r.cfg.latent_dim;
    const std::uint64_t seed = derive_seed(r.cfg.seed, {9});
    std::vector<json> recs;

    auto lr = eval::latent_recover_eval(g, inv, n, seed);
    recs.push_back({{"record", "latent_recovery"}, {"n", n}, {"image_l1", lr.image_l1}, {"latent_l1", lr.latent_l1}});

    const Tensor ends = eval::generate(g, zoo::sample_latent(d, 2, derive_seed(seed, {1})));
    auto seq = eval::interpolate_latents(g, inv, ends.slice_rows(0, 1), ends.slice_rows(1, 2), r.cfg.eval.interp_steps);
    const std::string ext = ends.dim(1) == 1 ? ".pgm" : ".ppm";
    r.image(io::image_grid(concat_rows(seq), seq.size()), "interpolation" + ext);

    Tensor z = zoo::sample_latent(d, n, derive_seed(seed, {2}));
    for (std::size_t i = 0; i < z.size(); ++i) z[i] *= r.cfg.eval.inflate;
    auto rp = eval::reproject(g, inv, z);
    recs.push_back({{"record", "reprojection"}, {"inflate", r.cfg.eval.inflate}, {"z_norm", summary_json(rp.z_norm)},
                    {"z_hat_norm", summary_json(rp.z_hat_norm)}});

    if (!o.data.empty()) {
        auto real = io::dataset_from(r.load(o.data));
        const std::size_t m = std::min(n, real.size());
        auto rv = eval::real_vs_generated_eval(g, inv, head(real, m), m, seed);
        recs.push_back({{"record", "real_vs_generated"}, {"n", m}, {"generated", summary_json(eval::summarize(rv.generated_l1))},
                        {"real", summary_json(eval::summarize(rv.real_l1))}, {"sign_test_real_minus_generated", sign_json(rv.test)}});
    }
    r.stage("evaluated");
    r.report(recs);
    std::cout << "image_l1 " << lr.image_l1 << " latent_l1 " << lr.latent_l1 << "\n";
}

void cmd_baseline_opt(Run& r, const Options& o) {
    auto t = load_net(r, o.target);
    if (t.is_generator()) throw ConfigError("baseline-opt: target must be a classifier");
    auto d = io::dataset_from(r.load(o.data));
    const Tensor x = head(d, r.cfg.eval.test_size);
    const std::size_t k = o.depth ? o.depth : r.cfg.eval.depth;
    const Tensor emb = net::forward_full(t.net.spec, t.net.params, x).at(k);
    auto res = eval::input_opt_invert(t.target(), emb, k, r.cfg.baseline);
    std::vector<json> recs{{{"record", "input_opt"},
                            {"depth", k},
                            {"n", x.dim(0)},
                            {"steps", r.cfg.baseline.steps},
                            {"best_step", res.best_step},
                            {"best_loss", res.best_loss},
                            {"psnr", summary_json(eval::summarize(eval::psnr_per_item(x, res.x)))}}};
    std::cout << "input_opt psnr " << eval::psnr(x, res.x);
    if (!o.inversion.empty()) {
        auto inv = load_inversion(r, o.inversion, t);
        if (inv.trained_up_to < k) throw ConfigError("baseline-opt: inversion not trained to depth " + std::to_string(k));
        const Tensor xp = dci::invert(inv, emb, k);
        recs.push_back({{"record", "feedforward"}, {"depth", k}, {"psnr", summary_json(eval::summarize(eval::psnr_per_item(x, xp)))}});
        std::cout << " feedforward psnr " << eval::psnr(x, xp);
    }
    std::cout << "\n";
    r.stage("evaluated");
    io::Checkpoint out = io::dataset_checkpoint(data::Dataset(res.x, head_labels(d, x.dim(0)), data::Provenance::synthetic), {{"depth", k}});
    r.save(out, "reconstructions.ckpt");
    r.report(recs);
}

void cmd_export_images(Run& r, const Options& o) {
    Tensor x;
    auto ck = r.load(o.data);
    if (ck.meta.value("kind", "") == "latents") throw ConfigError("export-images: latents are not images");
    x = io::dataset_from(ck).images();
    x = x.slice_rows(0, std::min(o.count, x.dim(0)));
    const std::string ext = x.dim(1) == 1 ? ".pgm" : ".ppm";
    const std::size_t item = x.size() / x.dim(0);
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "images/%04zu", i);
        Tensor one({x.dim(1), x.dim(2), x.dim(3)}, std::vector<double>(x.vec().begin() + std::ptrdiff_t(i * item),
                                                                        x.vec().begin() + std::ptrdiff_t((i + 1) * item)));
        r.image(one, name + ext);
    }
    r.image(io::image_grid(x, o.cols), "grid" + ext);
    std::cout << "exported " << x.dim(0) << "\n";
}

/// Arguments worth replaying: everything except the flags the manifest
/// records separately (config, seed, output directory).
std::vector<std::string> replay_args(const std::vector<std::string>& raw) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const std::string& a = raw[i];
        bool dropped = false;
        for (const char* f : {"--config", "--seed", "--out"}) {
            if (a == f) {
                ++i;
                dropped = true;
            } else if (a.rfind(std::string(f) + "=", 0) == 0) {
                dropped = true;
            }
        }
        if (!dropped) out.push_back(a);
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"zsinv: zero-shot model inversion toolkit", "zsinv"};
    app.require_subcommand(0, 1);
    Options o;

    using Handler = std::function<void(Run&, const Options&)>;
    struct Cmd {
        const char* name;
        const char* help;
        Handler fn;
        std::vector<std::string> flags;
    };
    const std::vector<Cmd> cmds = {
        {"gen-data", "render the shapes dataset (train.ckpt, val.ckpt)", cmd_gen_data, {}},
        {"train-target", "train the MicroVGG classifier", cmd_train_target, {"data"}},
        {"train-gan", "train the MicroGen generator", cmd_train_gan, {"data"}},
        {"synthesize", "synthesize images from a classifier's BN statistics", cmd_synthesize, {"target"}},
        {"invert-train", "train an inversion network", cmd_invert_train, {"target", "data", "depth", "end-to-end"}},
        {"invert-run", "invert images from a trained inversion", cmd_invert_run, {"target", "data", "inversion", "depth"}},
        {"sweep", "PSNR and cycle distance at every trained depth", cmd_sweep, {"target", "data", "inversion"}},
        {"attack", "random vs adversarial perturbation gap", cmd_attack, {"target", "data", "inversion", "depth"}},
        {"gan-eval", "latent recovery, interpolation and reprojection", cmd_gan_eval, {"generator", "inversion", "data"}},
        {"baseline-opt", "per-image input optimisation baseline", cmd_baseline_opt, {"target", "data", "inversion", "depth"}},
        {"export-images", "write dataset images as PGM/PPM", cmd_export_images, {"data", "count", "cols"}},
    };

    std::map<CLI::App*, const Cmd*> by_app;
    for (const auto& c : cmds) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", o.config, "JSON run config")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "overrides the config seed");
        sub->add_option("--out", o.out, "output directory")->required();
        sub->add_option("--resume", o.resume, "inversion checkpoint to continue from");
        for (const auto& f : c.flags) {
            if (f == "data") sub->add_option("--data", o.data, "dataset checkpoint (gen-data directory for train-target)");
            if (f == "target") sub->add_option("--target", o.target, "target network checkpoint")->required();
            if (f == "inversion") sub->add_option("--inversion", o.inversion, "inversion checkpoint");
            if (f == "generator") sub->add_option("--generator", o.generator, "generator checkpoint")->required();
            if (f == "depth") sub->add_option("--depth", o.depth, "inversion depth k");
            if (f == "end-to-end") sub->add_flag("--end-to-end", o.end_to_end, "train all modules jointly (ablation baseline)");
            if (f == "count") sub->add_option("--count", o.count, "images to export");
            if (f == "cols") sub->add_option("--cols", o.cols, "grid columns")->check(CLI::PositiveNumber);
        }
        by_app[sub] = &c;
    }

    if (argc < 2) {
        std::cerr << app.help();
        return 1;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    auto subs = app.get_subcommands();
    if (subs.empty()) {
        std::cerr << app.help();
        return 1;
    }
    const Cmd& cmd = *by_app.at(subs.front());
    try {
        if (!o.resume.empty() && std::string(cmd.name) != "invert-train") throw UsageError(std::string(cmd.name) + ": --resume is only meaningful for invert-train");
        std::vector<std::string> raw(argv + 2, argv + argc);
        Run run(cmd.name, replay_args(raw), o);
        cmd.fn(run, o);
        run.stage("done");
        return 0;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error: " << msg << "\n";
        return 2;
    }
}
