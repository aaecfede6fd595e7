#pragma once

#include <vector>

#include "nlosim/nn/layers.hpp"

namespace nlosim::modulation {

using nn::ParamStore;
using nn::Tape;
using nn::Var;

constexpr nn::real_t kLtmEps = nn::real_t(1e-5);

/// Upsampled condition representation at one scale: a 2^i x 2^i map carrying
/// `map_channels` channels. scale 0 is the projected z_q at 1x1.
struct ScaleRep {
    Var map;
    int scale_index = 0;
};

/// One light transport modulation block. A convolution over O_i followed by
/// a global pool produces 2*C values, split into the per-channel scaling t_s
/// and translation t_b; the feature map is standardized per channel and then
/// re-affined:
///   F_hat_c = t_s[c] * (F_c - mean(F_c)) / sqrt(var(F_c) + eps) + t_b[c]
/// With `spatial` set the pooled parameters are replaced by full-resolution
/// parameter maps (nearest-resized conv output), a config-flagged variant.
struct LtmBlock {
    nn::Conv to_params;  // map_channels -> 2 * feature_channels
    int feature_channels = 0;
    bool spatial = false;

    static LtmBlock create(ParamStore& store, const std::string& name, int map_channels,
                           int feature_channels, std::uint64_t seed, bool spatial = false);

    /// (t_s, t_b), each (1,1,C) pooled — or (h,w,C) maps in spatial mode,
    /// resized to the given target resolution.
    std::pair<Var, Var> derive_params(Tape& t, Var o, int target_h, int target_w) const;

    /// F -> modulated F_hat of identical shape.
    Var modulate(Tape& t, Var f, Var o) const;

    /// Encoder-side injection: channel-concat [modulate(F,O) || F].
    Var inject(Tape& t, Var f, Var o) const;
};

/// Nearest-neighbor 2x upsample followed by a 3x3 convolution; increments
/// the scale index.
struct UpsampleRep {
    nn::Conv conv;

    static UpsampleRep create(ParamStore& store, const std::string& name, int channels,
                              std::uint64_t seed);
    ScaleRep operator()(Tape& t, const ScaleRep& prev) const;
};

/// Scale index + feature channel count for one modulation site.
struct SiteSpec {
    int scale = 0;
    int feature_channels = 0;
};

/// z_q -> [O_0 .. O_{n_scales-1}] plus an LTM block per requested site.
/// `project` is the 1x1 conv taking the broadcast z_q to the map width.
/// Sites may cover a subset of scales (single-scale ablation).
struct ModulationChain {
    nn::Conv project;
    std::vector<UpsampleRep> ups;  // n_scales - 1
    std::vector<SiteSpec> sites;
    std::vector<LtmBlock> blocks;  // parallel to sites
    int n_d = 0;
    int map_channels = 0;
    int n_scales_ = 0;

    static ModulationChain create(ParamStore& store, const std::string& prefix, int n_d,
                                  int map_channels, int n_scales, const std::vector<SiteSpec>& sites,
                                  std::uint64_t seed, bool spatial = false);

    /// Builds all scale representations from the (1,1,n_d) condition code.
    std::vector<ScaleRep> scale_reps(Tape& t, Var z_q) const;

    /// Block for a scale index, or nullptr when that scale has no site.
    const LtmBlock* block_for(int scale) const;

    int n_scales() const { return n_scales_; }
};

}  // namespace nlosim::modulation
