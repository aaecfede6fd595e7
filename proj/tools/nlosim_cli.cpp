// Command-line surface: dataset simulation, two-stage training, evaluation,
// single-image reconstruction/reprojection, codebook inspection and the
// classical baseline.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "nlosim/common.hpp"
#include "nlosim/config.hpp"
#include "nlosim/dataset.hpp"
#include "nlosim/lightsim.hpp"
#include "nlosim/metrics.hpp"
#include "nlosim/training.hpp"

namespace fs = std::filesystem;
using namespace nlosim;

namespace {

struct CommonArgs {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

training::TrainConfig load_cfg(const CommonArgs& c) {
    training::TrainConfig cfg = training::load_config(c.config.empty() ? fs::path() : fs::path(c.config));
    if (c.seed_set) cfg.seed = c.seed;
    return cfg;
}

fs::path cache_dir_of(const training::TrainConfig& cfg) {
    if (!cfg.cache_dir.empty()) return cfg.cache_dir;
    return fs::path(cfg.manifest_path).parent_path() / "transport_cache";
}

dataset::Manifest manifest_of(const training::TrainConfig& cfg) {
    if (cfg.manifest_path.empty()) throw ConfigError("no manifest configured (key: manifest)");
    return dataset::Manifest::load(cfg.manifest_path);
}

void add_common(CLI::App* sub, CommonArgs& c) {
    sub->add_option("--config", c.config, "flat key = value config file");
    sub->add_option("--seed", c.seed, "seed override")->each([&c](const std::string&) {
        c.seed_set = true;
    });
}

void write_report(const training::TrainConfig& cfg, const metrics::MetricsReport& rep,
                  const std::string& stem) {
    fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    {
        std::ofstream out(dir / (stem + ".json"));
        out << rep.to_json() << "\n";
    }
    {
        std::ofstream out(dir / (stem + ".txt"));
        out << rep.to_table();
    }
    std::cout << rep.to_table();
    std::cout << "report written to " << (dir / (stem + ".json")).string() << "\n";
}

int cmd_simulate(const CommonArgs& c) {
    auto cfg = load_cfg(c);
    if (cfg.manifest_path.empty()) throw ConfigError("simulate: config must set manifest");
    fs::path mpath(cfg.manifest_path);
    if (mpath.filename() != "manifest.json")
        throw ConfigError("simulate: manifest path must end in manifest.json");
    if (cfg.condition_tags.empty()) throw ConfigError("simulate: config must set conditions");

    dataset::GenerateOptions opt;
    opt.train_count = cfg.gen_train_count;
    opt.test_count = cfg.gen_test_count;
    opt.seed = cfg.seed;
    opt.channels = cfg.channels;
    opt.out_root = mpath.parent_path();
    opt.source_dir = cfg.source_dir;
    opt.transport_cache = cache_dir_of(cfg);
    opt.threads = cfg.threads;

    auto m = dataset::generate_synthetic_dataset(cfg.conditions(), cfg.geometry, opt);
    std::cout << "dataset: " << m.records.size() << " records, " << m.n_conditions()
              << " conditions -> " << cfg.manifest_path << "\n";
    return 0;
}

int cmd_pretrain(const CommonArgs& c) {
    auto cfg = load_cfg(c);
    auto manifest = manifest_of(cfg);
    auto res = training::pretrain_autoencoder(cfg, manifest);
    std::cout << "autoencoder trained, final checkpoint " << res.final_path.string() << "\n";
    if (!res.history.empty())
        std::cout << "final val PSNR " << res.history.back().val_psnr << " dB\n";
    return 0;
}

int cmd_train(const CommonArgs& c, const std::string& ae_ckpt_path) {
    auto cfg = load_cfg(c);
    auto manifest = manifest_of(cfg);
    std::optional<training::Checkpoint> ae;
    if (!ae_ckpt_path.empty()) {
        ae = training::load_checkpoint(ae_ckpt_path);
    } else if (!cfg.flags.no_ot) {
        std::cout << "no --ae-ckpt given, running stage-1 pretraining first\n";
        auto res = training::pretrain_autoencoder(cfg, manifest);
        ae = std::move(res.final);
    }
    auto res = training::train_joint(cfg, manifest, ae);
    std::cout << "joint training done, final checkpoint " << res.final_path.string() << "\n";
    if (!res.history.empty()) {
        std::cout << "final val PSNR " << res.history.back().val_psnr << " dB, assignment accuracy "
                  << res.history.back().assign_accuracy << "\n";
    }
    return 0;
}

int cmd_eval(const CommonArgs& c, const std::string& ckpt_path, const std::string& split,
             bool baseline, double reg, const std::string& agnostic_path) {
    auto cfg = load_cfg(c);
    auto manifest = manifest_of(cfg);
    fs::path ck = ckpt_path.empty() ? fs::path(cfg.out_dir) / "joint_final.ckpt" : fs::path(ckpt_path);
    auto checkpoint = training::load_checkpoint(ck);
    auto model = training::bundle_from_checkpoint(checkpoint);

    metrics::EvalOptions opt;
    opt.with_tikhonov = baseline;
    opt.tikhonov_reg = reg;
    opt.cache_dir = cache_dir_of(cfg);
    opt.threads = cfg.threads;
    std::unique_ptr<networks::ModelBundle> agnostic;
    if (!agnostic_path.empty()) {
        agnostic = training::bundle_from_checkpoint(training::load_checkpoint(agnostic_path));
        opt.agnostic = agnostic.get();
    }
    auto rep = metrics::evaluate(*model, manifest, dataset::parse_split(split), opt);
    rep.config_hash = checkpoint.config_hash;
    write_report(cfg, rep, "metrics_" + split);
    return 0;
}

int cmd_reconstruct(const CommonArgs& c, const std::string& in, const std::string& ckpt_path,
                    const std::string& out) {
    (void)c;
    auto model = training::bundle_from_checkpoint(training::load_checkpoint(ckpt_path));
    ImageGrid y = load_png16(in);
    ImageGrid xp = networks::run_reconstruct(*model, y);
    save_png16(out, xp);
    std::cout << "wrote " << out << " (" << xp.h << "x" << xp.w << "x" << xp.c << ")\n";
    return 0;
}

int cmd_reproject(const CommonArgs& c, const std::string& hidden, int condition_id,
                  const std::string& ckpt_path, const std::string& out) {
    (void)c;
    auto model = training::bundle_from_checkpoint(training::load_checkpoint(ckpt_path));
    if (!model->has_joint) throw ContractError("reproject: checkpoint was trained with no_joint");
    if (!model->has_cond) throw ContractError("reproject: checkpoint has no condition branch");
    if (!model->has_vq)
        throw ContractError("reproject: checkpoint has no codebook (no_vq); cannot select by id");
    if (condition_id < 0 || condition_id >= model->cb.n_c)
        throw ContractError("reproject: condition id out of range");
    const nn::Tensor& codes = model->store.value(model->cb.codes);
    nn::Tensor z = nn::Tensor::vec(model->cb.n_d);
    for (int j = 0; j < model->cb.n_d; ++j) z.v[static_cast<std::size_t>(j)] = codes.m(condition_id, j);
    ImageGrid x = load_png16(hidden);
    ImageGrid yp = networks::run_reproject(*model, x, z);
    save_png16(out, yp);
    std::cout << "wrote " << out << " (" << yp.h << "x" << yp.w << "x" << yp.c << ")\n";
    return 0;
}

int cmd_codebook_stats(const CommonArgs& c, const std::string& ckpt_path, const std::string& split) {
    auto cfg = load_cfg(c);
    auto manifest = manifest_of(cfg);
    fs::path ck = ckpt_path.empty() ? fs::path(cfg.out_dir) / "joint_final.ckpt" : fs::path(ckpt_path);
    auto model = training::bundle_from_checkpoint(training::load_checkpoint(ck));
    auto st = metrics::codebook_stats(*model, manifest, dataset::parse_split(split));
    std::cout << st.to_table();
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "codebook_stats.json");
    out << st.to_json() << "\n";
    return 0;
}

int cmd_baseline(const CommonArgs& c, const std::string& method, double reg,
                 const std::string& split_name) {
    auto cfg = load_cfg(c);
    if (method != "tikhonov") throw ConfigError("baseline: unknown method '" + method + "'");
    auto manifest = manifest_of(cfg);
    if (!manifest.geometry)
        throw ConfigError("baseline: manifest carries no scene geometry (ingested dataset?)");
    auto split = dataset::parse_split(split_name);
    auto cache = cache_dir_of(cfg);

    metrics::MetricsReport rep;
    rep.split = split_name;
    rep.config_hash = cfg.config_hash();
    rep.per_condition.resize(manifest.conditions.size());
    std::vector<lightsim::TransportMatrix> transports;
    for (const auto& cond : manifest.conditions)
        transports.push_back(lightsim::cached_transport(cache, cond, *manifest.geometry));
    double ptotal = 0, stotal = 0;
    for (std::size_t ci = 0; ci < manifest.conditions.size(); ++ci) {
        rep.per_condition[ci].condition_id = static_cast<int>(ci);
        rep.per_condition[ci].name = manifest.conditions[ci].short_name();
    }
    for (const auto& rec : manifest.records) {
        if (rec.split != split) continue;
        ImageGrid x = load_png16(manifest.resolve(rec.hidden_path));
        ImageGrid y = load_png16(manifest.resolve(rec.projection_path));
        ImageGrid xt =
            lightsim::classical_reconstruct(transports[static_cast<std::size_t>(rec.condition_id)], y, reg);
        double p = metrics::psnr(xt, x);
        double s = metrics::ssim(xt, x);
        auto& pc = rep.per_condition[static_cast<std::size_t>(rec.condition_id)];
        pc.psnr_mean += p;
        pc.ssim_mean += s;
        pc.count += 1;
        ptotal += p;
        stotal += s;
        rep.count += 1;
    }
    if (rep.count == 0) throw DataError("baseline: empty split");
    for (auto& pc : rep.per_condition)
        if (pc.count) {
            pc.psnr_mean /= pc.count;
            pc.ssim_mean /= pc.count;
        }
    rep.psnr_mean = ptotal / rep.count;
    rep.ssim_mean = stotal / rep.count;
    write_report(cfg, rep, "baseline_" + split_name);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"passive NLOS imaging: forward simulation, unified learned reconstruction, "
                 "classical baselines"};
    app.require_subcommand(1);

    CommonArgs c_sim, c_pre, c_train, c_eval, c_rec, c_rep, c_cb, c_base;
    std::string ae_ckpt, eval_ckpt, eval_split = "test", agnostic_ckpt;
    bool eval_baseline = false;
    double eval_reg = 1e-3;
    std::string rec_in, rec_ckpt, rec_out;
    std::string rep_hidden, rep_ckpt, rep_out;
    int rep_cond = 0;
    std::string cb_ckpt, cb_split = "test";
    std::string base_method = "tikhonov", base_split = "test";
    double base_reg = 1e-3;

    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
    add_common(sim, c_sim);

    auto* pre = app.add_subcommand("pretrain-ae", "stage 1: hidden-image autoencoder");
    add_common(pre, c_pre);

    auto* train = app.add_subcommand("train", "full training (stage 1 if needed, then joint)");
    add_common(train, c_train);
    train->add_option("--ae-ckpt", ae_ckpt, "stage-1 checkpoint to reuse");

    auto* ev = app.add_subcommand("eval", "per-condition metrics report");
    add_common(ev, c_eval);
    ev->add_option("--ckpt", eval_ckpt, "checkpoint (default <out_dir>/joint_final.ckpt)");
    ev->add_option("--split", eval_split, "train|test");
    ev->add_flag("--baseline", eval_baseline, "add the classical Tikhonov column");
    ev->add_option("--reg", eval_reg, "Tikhonov regularizer for the baseline column");
    ev->add_option("--agnostic-ckpt", agnostic_ckpt, "condition-agnostic model column");

    auto* rec = app.add_subcommand("reconstruct", "projection image -> hidden image");
    add_common(rec, c_rec);
    rec->add_option("--in", rec_in, "projection image (png16)")->required();
    rec->add_option("--ckpt", rec_ckpt, "checkpoint")->required();
    rec->add_option("--out", rec_out, "output image path")->required();

    auto* rep = app.add_subcommand("reproject", "hidden image + condition id -> projection");
    add_common(rep, c_rep);
    rep->add_option("--hidden", rep_hidden, "hidden image (png16)")->required();
    rep->add_option("--condition-id", rep_cond, "codebook row to apply")->required();
    rep->add_option("--ckpt", rep_ckpt, "checkpoint")->required();
    rep->add_option("--out", rep_out, "output image path")->required();

    auto* cb = app.add_subcommand("codebook-stats", "assignment counts and confusion matrix");
    add_common(cb, c_cb);
    cb->add_option("--ckpt", cb_ckpt, "checkpoint (default <out_dir>/joint_final.ckpt)");
    cb->add_option("--split", cb_split, "train|test");

    auto* base = app.add_subcommand("baseline", "classical solver over a split");
    add_common(base, c_base);
    base->add_option("--method", base_method, "tikhonov");
    base->add_option("--reg", base_reg, "regularizer");
    base->add_option("--split", base_split, "train|test");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        std::cerr << app.help() << "\n";
        return 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(c_sim);
        if (pre->parsed()) return cmd_pretrain(c_pre);
        if (train->parsed()) return cmd_train(c_train, ae_ckpt);
        if (ev->parsed())
            return cmd_eval(c_eval, eval_ckpt, eval_split, eval_baseline, eval_reg, agnostic_ckpt);
        if (rec->parsed()) return cmd_reconstruct(c_rec, rec_in, rec_ckpt, rec_out);
        if (rep->parsed()) return cmd_reproject(c_rep, rep_hidden, rep_cond, rep_ckpt, rep_out);
        if (cb->parsed()) return cmd_codebook_stats(c_cb, cb_ckpt, cb_split);
        if (base->parsed()) return cmd_baseline(c_base, base_method, base_reg, base_split);
    } catch (const Error& e) {
        std::cerr << "error: " << e.error_class() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
