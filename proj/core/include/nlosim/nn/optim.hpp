#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nlosim/nn/params.hpp"

namespace nlosim::nn {

/// lr(t) = lr_end + 0.5*(lr_start - lr_end)*(1 + cos(pi * t / total)),
/// t in [0, total]. total <= 0 degenerates to lr_start.
double cosine_lr(double lr_start, double lr_end, std::int64_t step, std::int64_t total_steps);

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    bool decoupled = false;  // true = AdamW-style decay applied to weights
};

/// Adam / AdamW over a fixed subset of parameters in a ParamStore. First and
/// second moments are kept in float64 for run-to-run stability; state
/// serializes through the checkpoint container keyed by parameter name.
class Adam {
public:
    Adam(ParamStore& store, std::vector<ParamId> params, AdamSettings settings);

    /// Applies one update with the given learning rate. Gradients are read
    /// from `grads` for exactly the owned parameter subset.
    void step(const GradBuffer& grads, double lr);

    std::int64_t steps_taken() const { return t_; }
    const std::vector<ParamId>& owned() const { return params_; }
    const AdamSettings& settings() const { return settings_; }

    /// Named state export/import for checkpointing. Keys:
    /// "<param>.m", "<param>.v" plus "__step".
    std::map<std::string, std::vector<double>> export_state() const;
    void import_state(const std::map<std::string, std::vector<double>>& state);

private:
    ParamStore& store_;
    std::vector<ParamId> params_;
    AdamSettings settings_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Scales all gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
double clip_global_norm(GradBuffer& grads, double max_norm);

}  // namespace nlosim::nn
