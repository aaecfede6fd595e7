#include "nlosim/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "nlosim/metrics.hpp"
#include "nlosim/nn/optim.hpp"

namespace nlosim::training {

using dataset::Batch;
using dataset::BatchStream;
using dataset::Manifest;
using dataset::Split;
using networks::ModelBundle;
using nn::GradBuffer;
using nn::Tape;
using nn::Var;

namespace {

std::string fmt_metrics(const EpochMetrics& m) { return m.to_json(); }

struct JsonlLog {
    std::ofstream out;
    LogSink extra;

    JsonlLog(const std::filesystem::path& path, LogSink sink) : extra(std::move(sink)) {
        std::filesystem::create_directories(path.parent_path());
        out.open(path, std::ios::app);
        if (!out) throw IoError("training: cannot open log " + path.string());
    }
    void line(const std::string& s) {
        out << s << "\n";
        if (extra) extra(s);
    }
    void flush() { out.flush(); }
};

/// Deterministic data-parallel gradient pass: fixed chunking over the batch,
/// per-chunk buffers reduced in chunk order.
template <typename PerSample>
void batched_grads(int batch_size, int threads, GradBuffer& grads, const PerSample& per_sample) {
    int t = std::max(1, std::min(threads, batch_size));
    if (t == 1) {
        per_sample(0, batch_size, grads);
        return;
    }
    std::vector<std::unique_ptr<GradBuffer>> locals(static_cast<std::size_t>(t));
    parallel_chunks(batch_size, t, [&](int chunk, int begin, int end) {
        locals[static_cast<std::size_t>(chunk)] = std::make_unique<GradBuffer>(grads);
        // A fresh GradBuffer copies sizes, not values; zero to be explicit.
        locals[static_cast<std::size_t>(chunk)]->zero();
        per_sample(begin, end, *locals[static_cast<std::size_t>(chunk)]);
    });
    for (auto& l : locals) grads.add(*l);
}

double mean_image_l1(const ImageGrid& a, const ImageGrid& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) s += std::abs(a.v[i] - b.v[i]);
    return s / static_cast<double>(a.v.size());
}

/// Unique train-split hidden images (the same hidden image appears once per
/// condition; the autoencoder sees each once per epoch).
std::vector<std::string> unique_hidden_paths(const Manifest& m, Split split) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& r : m.records) {
        if (r.split != split) continue;
        if (seen.insert(r.hidden_path).second) out.push_back(r.hidden_path);
    }
    return out;
}

}  // namespace

std::string EpochMetrics::to_json() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%d,\"train_loss\":%.9g,\"val_psnr\":%.9g,"
                  "\"assign_accuracy\":%.9g,\"codebook_collapse\":%s}",
                  epoch, train_loss, val_psnr, assign_accuracy,
                  codebook_collapse ? "true" : "false");
    return buf;
}

Checkpoint make_checkpoint(const ModelBundle& m, const TrainConfig& cfg, const std::string& stage,
                           std::uint32_t epoch, const std::string& metrics_json) {
    Checkpoint ck;
    ck.config_hash = cfg.config_hash();
    ck.stage = stage;
    ck.arch_text = m.arch.canonical_text();
    ck.flags_text = m.flags.canonical_text();
    ck.n_c = m.n_c;
    ck.epoch = epoch;
    ck.metrics_json = metrics_json;
    snapshot_params(m.store, ck);
    return ck;
}

void require_arch_match(const Checkpoint& ck, const networks::ArchConfig& arch) {
    if (ck.arch_text != arch.canonical_text())
        throw IntegrityError(
            "checkpoint: architecture descriptor does not match the configured model");
}

std::unique_ptr<ModelBundle> bundle_from_checkpoint(const Checkpoint& ck) {
    networks::ArchConfig arch = networks::ArchConfig::parse_text(ck.arch_text);
    networks::AblationFlags flags;
    // flags_text is the canonical dump; parse the 0/1 values back.
    std::istringstream in(ck.flags_text);
    std::string line;
    auto want = [](const std::string& l, const char* key) {
        return l.rfind(key, 0) == 0 && l.back() == '1';
    };
    while (std::getline(in, line)) {
        if (want(line, "flags.no_ot=")) flags.no_ot = true;
        if (want(line, "flags.no_joint=")) flags.no_joint = true;
        if (want(line, "flags.single_scale_modulation=")) flags.single_scale_modulation = true;
        if (want(line, "flags.concat_modulation=")) flags.concat_modulation = true;
        if (want(line, "flags.no_vq=")) flags.no_vq = true;
        if (want(line, "flags.no_modulation=")) flags.no_modulation = true;
    }
    auto m = networks::build_model(arch, flags, ck.n_c, /*seed=*/0);
    restore_params(m->store, ck);
    return m;
}

// =========================================================== stage 1: AE

StageResult pretrain_autoencoder(const TrainConfig& cfg, const Manifest& manifest, LogSink log) {
    cfg.validate();
    if (manifest.hidden_h != cfg.arch.img_h || manifest.hidden_w != cfg.arch.img_w ||
        manifest.channels != cfg.arch.img_c)
        throw DimensionError("pretrain: manifest resolution does not match arch");

    auto train_paths = unique_hidden_paths(manifest, Split::train);
    auto val_paths = unique_hidden_paths(manifest, Split::test);
    if (train_paths.empty()) throw DataError("pretrain: no training hidden images");

    auto m = networks::build_model(cfg.arch, cfg.flags, std::max(1, manifest.n_conditions()),
                                   cfg.seed);
    nn::AdamSettings as;
    as.beta1 = cfg.ae_beta1;
    as.beta2 = cfg.ae_beta2;
    as.weight_decay = cfg.ae_weight_decay;
    std::vector<nn::ParamId> ae_ids;
    for (auto id : m->store.ids_with_prefix("eh.")) ae_ids.push_back(id);
    for (auto id : m->store.ids_with_prefix("dh.")) ae_ids.push_back(id);
    nn::Adam opt(m->store, ae_ids, as);

    std::filesystem::path out_dir(cfg.out_dir);
    std::filesystem::create_directories(out_dir);
    JsonlLog jlog(out_dir / "ae_train_log.jsonl", log);

    const int n = static_cast<int>(train_paths.size());
    const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = static_cast<std::int64_t>(batches_per_epoch) * cfg.ae_epochs;
    std::int64_t step = 0;

    StageResult result;
    double best_psnr = -1.0;
    GradBuffer grads(m->store);

    for (int epoch = 0; epoch < cfg.ae_epochs; ++epoch) {
        std::vector<int> order(train_paths.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        deterministic_shuffle(order, derive_seed(cfg.seed, 0xae0u, static_cast<std::uint64_t>(epoch)));

        double epoch_loss = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            int begin = b * cfg.batch_size;
            int end = std::min(begin + cfg.batch_size, n);
            int bs = end - begin;
            std::vector<nn::Tensor> images(static_cast<std::size_t>(bs));
            for (int i = 0; i < bs; ++i)
                images[static_cast<std::size_t>(i)] = nn::from_image(
                    load_png16(manifest.resolve(train_paths[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + i)])])));

            grads.zero();
            std::vector<double> sample_loss(static_cast<std::size_t>(bs), 0.0);
            batched_grads(bs, cfg.threads, grads, [&](int s0, int s1, GradBuffer& g) {
                for (int s = s0; s < s1; ++s) {
                    Tape t(&m->store);
                    Var x = t.input(images[static_cast<std::size_t>(s)]);
                    auto out = networks::autoencoder_forward(t, m->ae, x);
                    Var loss = t.mean_abs_diff(out.xhat, x);
                    sample_loss[static_cast<std::size_t>(s)] = t.val(loss).v[0];
                    t.backward(loss, nn::real_t(1.0 / bs));
                    t.add_param_grads_to(g);
                }
            });
            double batch_loss = 0.0;
            for (double l : sample_loss) batch_loss += l;
            batch_loss /= bs;
            if (!std::isfinite(batch_loss))
                throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(b));
            epoch_loss += batch_loss;

            double lr = nn::cosine_lr(cfg.ae_lr_start, cfg.ae_lr_end, step, total_steps);
            opt.step(grads, lr);
            ++step;
            char line[160];
            std::snprintf(line, sizeof(line), "{\"stage\":\"ae\",\"step\":%lld,\"lr\":%.9g,\"l1\":%.9g}",
                          static_cast<long long>(step), lr, batch_loss);
            jlog.line(line);
        }
        epoch_loss /= batches_per_epoch;

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = epoch_loss;
        double vp = 0.0;
        const auto& probe = val_paths.empty() ? train_paths : val_paths;
        for (const auto& p : probe) {
            ImageGrid x = load_png16(manifest.resolve(p));
            vp += metrics::psnr(networks::run_autoencode(*m, x), x);
        }
        em.val_psnr = vp / static_cast<double>(probe.size());
        result.history.push_back(em);
        jlog.line(fmt_metrics(em));
        jlog.flush();

        Checkpoint ck = make_checkpoint(*m, cfg, "ae", static_cast<std::uint32_t>(epoch), em.to_json());
        char name[48];
        std::snprintf(name, sizeof(name), "ae_epoch_%03d.ckpt", epoch);
        save_checkpoint(out_dir / name, ck);
        if (em.val_psnr > best_psnr) {
            best_psnr = em.val_psnr;
            save_checkpoint(out_dir / "ae_best.ckpt", ck);
            result.best_path = out_dir / "ae_best.ckpt";
        }
    }

    Checkpoint final_ck = make_checkpoint(*m, cfg, "ae", static_cast<std::uint32_t>(cfg.ae_epochs),
                                          result.history.empty() ? "{}" : result.history.back().to_json());
    final_ck.optim["ae"] = opt.export_state();
    save_checkpoint(out_dir / "ae_final.ckpt", final_ck);
    result.final = std::move(final_ck);
    result.final_path = out_dir / "ae_final.ckpt";
    if (result.best_path.empty()) result.best_path = result.final_path;
    return result;
}

// =========================================================== stage 2: joint

namespace {

struct JointLossAccum {
    losses::LossReport sums;
    int samples = 0;

    void add(const losses::LossReport& r) {
        sums.l1 += r.l1;
        sums.ot += r.ot;
        sums.vq_infonce += r.vq_infonce;
        sums.vq_codebook += r.vq_codebook;
        sums.vq_commit += r.vq_commit;
        sums.gan_g += r.gan_g;
        sums.gan_d += r.gan_d;
        sums.perceptual += r.perceptual;
        sums.total_g += r.total_g;
        sums.total_d += r.total_d;
        ++samples;
    }
    losses::LossReport mean() const {
        losses::LossReport r = sums;
        if (samples == 0) return r;
        double inv = 1.0 / samples;
        r.l1 *= inv;
        r.ot *= inv;
        r.vq_infonce *= inv;
        r.vq_codebook *= inv;
        r.vq_commit *= inv;
        r.gan_g *= inv;
        r.gan_d *= inv;
        r.perceptual *= inv;
        r.total_g *= inv;
        r.total_d *= inv;
        return r;
    }
};

/// Condition code for training: train-mode quantization (label row) with a
/// codebook, raw latent without one, invalid Var when the condition branch
/// is off. Returns the code Var plus VQ loss pieces when applicable.
struct TrainCode {
    Var z;
    bool has_vq = false;
    codebook::VqLossVars vq;
};

TrainCode train_code(Tape& t, const ModelBundle& m, Var y, int label,
                     const losses::LossWeights& w) {
    TrainCode out;
    if (!m.has_cond) return out;
    Var l = m.ec.forward(t, y);
    if (m.has_vq) {
        out.vq = codebook::vq_loss(t, l, m.cb, label, w.tau, w.alpha, w.beta);
        out.z = out.vq.z_q;
        out.has_vq = true;
    } else {
        out.z = l;
    }
    return out;
}

}  // namespace

StageResult train_joint(const TrainConfig& cfg, const Manifest& manifest,
                        const std::optional<Checkpoint>& ae_ckpt, LogSink log) {
    cfg.validate();
    if (manifest.hidden_h != cfg.arch.img_h || manifest.hidden_w != cfg.arch.img_w)
        throw DimensionError("train_joint: manifest resolution does not match arch");
    if (manifest.hidden_h != manifest.wall_h || manifest.hidden_w != manifest.wall_w)
        throw ConfigError("train_joint: hidden and wall resolutions must match for the networks");
    if (manifest.count(Split::train) == 0) throw DataError("train_joint: empty train split");

    const auto& flags = cfg.flags;
    if (!ae_ckpt && !flags.no_ot)
        throw ContractError("train_joint: autoencoder checkpoint required unless no_ot is set");

    auto m = networks::build_model(cfg.arch, flags, manifest.n_conditions(), cfg.seed);
    if (ae_ckpt) {
        require_arch_match(*ae_ckpt, cfg.arch);
        restore_params(m->store, *ae_ckpt, "eh.");
        restore_params(m->store, *ae_ckpt, "dh.");
    }

    const bool freeze_dh = cfg.freeze_decoder && !flags.no_ot;
    const bool use_ot = !flags.no_ot;
    const bool joint = m->has_joint;

    // Generator group: everything except the discriminator, the frozen
    // perceptual net, E_h (target encoder), and D_h when frozen.
    std::vector<nn::ParamId> gen_ids, disc_ids;
    for (auto id : m->store.all_ids()) {
        const std::string& name = m->store.name(id);
        if (name.rfind("disc.", 0) == 0) {
            disc_ids.push_back(id);
            continue;
        }
        if (name.rfind("percep.", 0) == 0) continue;
        if (name.rfind("eh.", 0) == 0) continue;
        if (freeze_dh && name.rfind("dh.", 0) == 0) continue;
        gen_ids.push_back(id);
    }

    nn::AdamSettings as;
    as.beta1 = cfg.joint_beta1;
    as.beta2 = cfg.joint_beta2;
    as.weight_decay = cfg.joint_weight_decay;
    as.decoupled = true;
    nn::Adam opt_g(m->store, gen_ids, as);
    std::optional<nn::Adam> opt_d;
    if (joint) opt_d.emplace(m->store, disc_ids, as);

    std::filesystem::path out_dir(cfg.out_dir);
    std::filesystem::create_directories(out_dir);
    JsonlLog jlog(out_dir / "joint_train_log.jsonl", log);

    const int train_records = static_cast<int>(manifest.count(Split::train));
    const int batches_per_epoch = (train_records + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_gen_steps =
        static_cast<std::int64_t>(batches_per_epoch) * cfg.joint_epochs;
    const std::int64_t total_disc_steps = total_gen_steps * cfg.disc_steps_per_gen;
    std::int64_t gen_step = 0, disc_step = 0;

    StageResult result;
    double best_psnr = -1.0;
    GradBuffer grads(m->store);

    for (int epoch = 0; epoch < cfg.joint_epochs; ++epoch) {
        BatchStream stream(manifest, Split::train, cfg.batch_size,
                           derive_seed(cfg.seed, 0x70124u, static_cast<std::uint64_t>(epoch)));
        double epoch_loss = 0.0;
        int batch_index = 0;
        while (auto batch = stream.next()) {
            const int bs = batch->size();
            JointLossAccum accum;
            std::vector<losses::LossReport> reports(static_cast<std::size_t>(bs));

            // ---- discriminator step(s) ----
            if (joint) {
                for (int rep = 0; rep < cfg.disc_steps_per_gen; ++rep) {
                    grads.zero();
                    batched_grads(bs, cfg.threads, grads, [&](int s0, int s1, GradBuffer& g) {
                        for (int s = s0; s < s1; ++s) {
                            // Fake projection without generator gradients.
                            Tape noG(&m->store, /*track=*/false);
                            Var xe = noG.input(batch->hidden[static_cast<std::size_t>(s)]);
                            Var ye = noG.input(batch->projection[static_cast<std::size_t>(s)]);
                            TrainCode code = train_code(noG, *m, ye,
                                                        batch->condition_ids[static_cast<std::size_t>(s)],
                                                        cfg.weights);
                            Var ype = networks::reproject_forward(noG, *m, xe, code.z);
                            nn::Tensor fake = noG.val(ype);

                            Tape t(&m->store);
                            Var x = t.input(batch->hidden[static_cast<std::size_t>(s)]);
                            Var y = t.input(batch->projection[static_cast<std::size_t>(s)]);
                            Var yp = t.input(fake);
                            auto d_real = networks::discriminate_forward(t, *m, x, y);
                            auto d_fake = networks::discriminate_forward(t, *m, x, yp);
                            auto gl = losses::gan_losses(t, d_real, d_fake);
                            reports[static_cast<std::size_t>(s)].gan_d =
                                t.val(gl.d).v[0];
                            t.backward(gl.d, nn::real_t(1.0 / bs));
                            t.add_param_grads_to(g);
                        }
                    });
                    if (cfg.grad_clip > 0.0) nn::clip_global_norm(grads, cfg.grad_clip);
                    double lr_d =
                        nn::cosine_lr(cfg.joint_lr_start, cfg.joint_lr_end, disc_step, total_disc_steps);
                    opt_d->step(grads, lr_d);
                    ++disc_step;
                }
            }

            // ---- generator step ----
            grads.zero();
            batched_grads(bs, cfg.threads, grads, [&](int s0, int s1, GradBuffer& g) {
                for (int s = s0; s < s1; ++s) {
                    losses::LossReport& rep = reports[static_cast<std::size_t>(s)];
                    // OT target from the frozen hidden-image encoder.
                    nn::Tensor lat_h_val;
                    if (use_ot) {
                        Tape noG(&m->store, /*track=*/false);
                        Var xe = noG.input(batch->hidden[static_cast<std::size_t>(s)]);
                        lat_h_val = noG.val(m->ae.eh.forward(noG, xe));
                    }

                    Tape t(&m->store);
                    Var x = t.input(batch->hidden[static_cast<std::size_t>(s)]);
                    Var y = t.input(batch->projection[static_cast<std::size_t>(s)]);
                    TrainCode code = train_code(t, *m, y,
                                                batch->condition_ids[static_cast<std::size_t>(s)],
                                                cfg.weights);

                    auto rec = networks::reconstruct_forward(t, *m, y, code.z);
                    Var lat_h = use_ot ? t.input(lat_h_val) : Var{};
                    auto rl = losses::recon_loss(t, x, rec.x_prime, lat_h, rec.latent,
                                                 cfg.weights.lambda1);
                    rep.l1 = t.val(rl.l1).v[0];
                    if (use_ot) rep.ot = t.val(rl.ot).v[0];
                    Var total = rl.total;

                    if (code.has_vq) {
                        rep.vq_infonce = t.val(code.vq.infonce).v[0];
                        rep.vq_codebook = t.val(code.vq.codebook_term).v[0];
                        rep.vq_commit = t.val(code.vq.commit_term).v[0];
                        total = t.add(total, t.scale(code.vq.total,
                                                     static_cast<nn::real_t>(cfg.weights.lambda_vq)));
                    }
                    if (joint) {
                        Var yp = networks::reproject_forward(t, *m, x, code.z);
                        auto d_fake = networks::discriminate_forward(t, *m, x, yp);
                        auto gl = losses::gan_losses(t, d_fake, d_fake);  // only .g is used
                        rep.gan_g = t.val(gl.g).v[0];
                        total = t.add(total, t.scale(gl.g, static_cast<nn::real_t>(cfg.weights.lambda_gan)));
                        Var perc = losses::perceptual_loss(t, m->percep, y, yp);
                        rep.perceptual = t.val(perc).v[0];
                        total = t.add(total, t.scale(perc, static_cast<nn::real_t>(cfg.weights.lambda2)));
                    }
                    rep.total_g = t.val(total).v[0];
                    rep.total_d = rep.gan_d;
                    t.backward(total, nn::real_t(1.0 / bs));
                    t.add_param_grads_to(g);
                }
            });
            for (const auto& r : reports) accum.add(r);
            losses::LossReport batch_report = accum.mean();
            if (!std::isfinite(batch_report.total_g) || !std::isfinite(batch_report.total_d))
                throw NumericError("train_joint: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(batch_index) + " report " +
                                   batch_report.to_json());
            epoch_loss += batch_report.total_g;

            if (cfg.grad_clip > 0.0) nn::clip_global_norm(grads, cfg.grad_clip);
            double lr_g = nn::cosine_lr(cfg.joint_lr_start, cfg.joint_lr_end, gen_step, total_gen_steps);
            opt_g.step(grads, lr_g);
            ++gen_step;
            if (m->has_vq) codebook::renormalize_rows(m->store, m->cb);

            char head[96];
            std::snprintf(head, sizeof(head), "{\"stage\":\"joint\",\"step\":%lld,\"lr\":%.9g,\"losses\":",
                          static_cast<long long>(gen_step), lr_g);
            jlog.line(std::string(head) + batch_report.to_json() + "}");
            ++batch_index;
        }
        epoch_loss /= batches_per_epoch;

        // ---- validation probe ----
        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = epoch_loss;
        Split probe_split = manifest.count(Split::test) > 0 ? Split::test : Split::train;
        double vp = 0.0;
        int vn = 0;
        std::vector<int> assigned(static_cast<std::size_t>(std::max(1, m->n_c)), 0);
        int correct = 0;
        for (const auto& rec : manifest.records) {
            if (rec.split != probe_split) continue;
            ImageGrid x = load_png16(manifest.resolve(rec.hidden_path));
            ImageGrid y = load_png16(manifest.resolve(rec.projection_path));
            ImageGrid xp = networks::run_reconstruct(*m, y);
            vp += metrics::psnr(xp, x);
            ++vn;
            if (m->has_vq) {
                auto code = networks::infer_code(*m, y);
                assigned[static_cast<std::size_t>(code.index)] += 1;
                if (code.index == rec.condition_id) ++correct;
            }
        }
        em.val_psnr = vn ? vp / vn : 0.0;
        if (m->has_vq && vn) {
            em.assign_accuracy = static_cast<double>(correct) / vn;
            for (int c = 0; c < m->n_c; ++c)
                if (assigned[static_cast<std::size_t>(c)] == 0) em.codebook_collapse = true;
            if (em.codebook_collapse)
                std::cerr << "warning: codebook collapse, some code has zero test assignments "
                             "(epoch "
                          << epoch << ")\n";
        }
        result.history.push_back(em);
        jlog.line(fmt_metrics(em));
        jlog.flush();

        Checkpoint ck = make_checkpoint(*m, cfg, "joint", static_cast<std::uint32_t>(epoch), em.to_json());
        char name[48];
        std::snprintf(name, sizeof(name), "joint_epoch_%03d.ckpt", epoch);
        save_checkpoint(out_dir / name, ck);
        if (em.val_psnr > best_psnr) {
            best_psnr = em.val_psnr;
            save_checkpoint(out_dir / "joint_best.ckpt", ck);
            result.best_path = out_dir / "joint_best.ckpt";
        }
    }

    Checkpoint final_ck =
        make_checkpoint(*m, cfg, "joint", static_cast<std::uint32_t>(cfg.joint_epochs),
                        result.history.empty() ? "{}" : result.history.back().to_json());
    final_ck.optim["gen"] = opt_g.export_state();
    if (opt_d) final_ck.optim["disc"] = opt_d->export_state();
    save_checkpoint(out_dir / "joint_final.ckpt", final_ck);
    result.final = std::move(final_ck);
    result.final_path = out_dir / "joint_final.ckpt";
    if (result.best_path.empty()) result.best_path = result.final_path;
    return result;
}

}  // namespace nlosim::training
