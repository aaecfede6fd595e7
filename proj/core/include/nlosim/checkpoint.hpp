#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nlosim/nn/params.hpp"

namespace nlosim::training {

/// Versioned container for everything a run needs to resume or evaluate:
/// all parameter arrays (codebook included), optimizer state, the
/// architecture + ablation descriptors, epoch and a metric snapshot.
/// Serialized with magic "NLCK1" and a trailing content hash; load rejects
/// unknown versions and corrupt payloads.
struct Checkpoint {
    std::uint32_t version = 1;
    std::uint64_t config_hash = 0;
    std::string stage;  // "ae" or "joint"
    std::string arch_text;
    std::string flags_text;
    std::int32_t n_c = 0;
    std::uint32_t epoch = 0;
    std::string metrics_json;
    std::map<std::string, nn::Tensor> arrays;
    std::map<std::string, std::map<std::string, std::vector<double>>> optim;

    /// Hash of the parameter payload only (the determinism fingerprint).
    std::uint64_t params_hash() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every store array into ck.arrays (by name).
void snapshot_params(const nn::ParamStore& store, Checkpoint& ck);

/// Writes ck.arrays back into the store by name; missing names or shape
/// mismatches raise IntegrityError. Arrays in ck without a store entry are
/// ignored (a larger checkpoint can feed a smaller model, e.g. AE-only).
void restore_params(nn::ParamStore& store, const Checkpoint& ck, const std::string& prefix = "");

}  // namespace nlosim::training
