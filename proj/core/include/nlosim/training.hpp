#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "nlosim/checkpoint.hpp"
#include "nlosim/config.hpp"
#include "nlosim/dataset.hpp"
#include "nlosim/losses.hpp"
#include "nlosim/networks.hpp"

namespace nlosim::training {

/// Per-epoch probe numbers recorded into checkpoints and logs.
struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double val_psnr = 0.0;
    double assign_accuracy = 0.0;  // joint stage only
    bool codebook_collapse = false;
    std::string to_json() const;
};

struct StageResult {
    Checkpoint final;
    std::filesystem::path final_path;
    std::filesystem::path best_path;
    std::vector<EpochMetrics> history;
};

using LogSink = std::function<void(const std::string& line)>;

/// Stage 1: Adam (beta2=0.999, no decay), cosine lr ae_lr_start ->
/// ae_lr_end, minimizing mean|x - xhat| over the train-split hidden images
/// (deduplicated across conditions). Emits a checkpoint per epoch plus
/// best-by-validation-PSNR and final.
StageResult pretrain_autoencoder(const TrainConfig& cfg, const dataset::Manifest& manifest,
                                 LogSink log = nullptr);

/// Stage 2: alternating discriminator/generator AdamW steps (momenta 0.9/0.9,
/// decoupled weight decay), cosine lr joint_lr_start -> joint_lr_end, global
/// gradient-norm clip. Honors every ablation flag; the autoencoder
/// checkpoint is required unless no_ot is set (which trains the decoder
/// jointly from scratch).
StageResult train_joint(const TrainConfig& cfg, const dataset::Manifest& manifest,
                        const std::optional<Checkpoint>& ae_ckpt, LogSink log = nullptr);

/// Rebuilds the model a checkpoint was trained with (arch + flags + n_c
/// from the container) and restores all parameter arrays.
std::unique_ptr<networks::ModelBundle> bundle_from_checkpoint(const Checkpoint& ck);

/// Builds the stage-appropriate checkpoint skeleton for a model.
Checkpoint make_checkpoint(const networks::ModelBundle& m, const TrainConfig& cfg,
                           const std::string& stage, std::uint32_t epoch,
                           const std::string& metrics_json);

/// True when the checkpoint's architecture/flags descriptors match the
/// config; used to reject foreign checkpoints before training/eval.
void require_arch_match(const Checkpoint& ck, const networks::ArchConfig& arch);

}  // namespace nlosim::training
