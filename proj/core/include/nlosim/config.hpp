#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nlosim/conditions.hpp"
#include "nlosim/losses.hpp"
#include "nlosim/networks.hpp"

namespace nlosim::training {

/// Everything one run needs. Populated from a flat `key = value` config
/// file; any key may be overridden by an environment variable
/// NLOSIM_<KEY> with dots mapped to underscores (e.g. NLOSIM_ARCH_STAGES).
struct TrainConfig {
    std::string manifest_path;
    std::string out_dir = "runs/default";
    std::string cache_dir;  // transport cache; defaults to <manifest dir>/transport_cache

    networks::ArchConfig arch;
    networks::AblationFlags flags;
    losses::LossWeights weights;

    // stage 1 (autoencoder): Adam, cosine 1e-4 -> 1e-8
    int ae_epochs = 50;
    double ae_lr_start = 1e-4;
    double ae_lr_end = 1e-8;
    double ae_beta1 = 0.9;
    double ae_beta2 = 0.999;
    double ae_weight_decay = 0.0;

    // stage 2 (joint): AdamW, cosine 1e-4 -> 1e-7
    int joint_epochs = 50;
    double joint_lr_start = 1e-4;
    double joint_lr_end = 1e-7;
    double joint_beta1 = 0.9;
    double joint_beta2 = 0.9;
    double joint_weight_decay = 1e-4;

    int batch_size = 16;
    std::uint64_t seed = 0;
    bool freeze_decoder = true;
    double grad_clip = 1.0;
    int disc_steps_per_gen = 1;
    int threads = 4;

    // dataset generation (simulate subcommand)
    std::vector<std::string> condition_tags;  // "70;1;A;Wall" style
    bool occluder_enabled = true;
    // Off-center so shadow edges sweep distinct wall pixels per hidden
    // pixel; this keeps the occluded transport numerically full-rank.
    Occluder occluder{4.3, -3.1, 28.0, 28.0, 33.0};
    SceneGeometry geometry;
    int gen_train_count = 160;
    int gen_test_count = 40;
    int channels = 1;
    std::string source_dir;

    void validate() const;
    /// Stable, exhaustive key=value dump; hashed into checkpoints.
    std::string canonical_text() const;
    std::uint64_t config_hash() const;

    /// Conditions built from condition_tags with the shared occluder.
    std::vector<ConditionSpec> conditions() const;
};

/// Parses the file (if non-empty), then applies NLOSIM_* environment
/// overrides. Unknown keys raise ConfigError naming the key.
TrainConfig load_config(const std::filesystem::path& file);
TrainConfig parse_config_lines(const std::map<std::string, std::string>& kv);

}  // namespace nlosim::training
