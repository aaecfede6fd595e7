#include "nlosim/modulation.hpp"

namespace nlosim::modulation {

LtmBlock LtmBlock::create(ParamStore& store, const std::string& name, int map_channels,
                          int feature_channels, std::uint64_t seed, bool spatial) {
    LtmBlock b;
    b.to_params = nn::Conv::create(store, name + ".params", map_channels, 2 * feature_channels, 3, 1,
                                   1, seed);
    b.feature_channels = feature_channels;
    b.spatial = spatial;
    return b;
}

std::pair<Var, Var> LtmBlock::derive_params(Tape& t, Var o, int target_h, int target_w) const {
    Var raw = to_params(t, o);
    if (spatial) {
        Var maps = t.resize_nn(raw, target_h, target_w);
        Var ts = t.slice_c(maps, 0, feature_channels);
        Var tb = t.slice_c(maps, feature_channels, feature_channels);
        return {ts, tb};
    }
    Var pooled = t.global_avg_pool(raw);
    Var ts = t.slice_c(pooled, 0, feature_channels);
    Var tb = t.slice_c(pooled, feature_channels, feature_channels);
    return {ts, tb};
}

Var LtmBlock::modulate(Tape& t, Var f, Var o) const {
    const auto& tf = t.val(f);
    if (tf.c != feature_channels)
        throw DimensionError("LtmBlock: feature has " + std::to_string(tf.c) + " channels, block expects " +
                             std::to_string(feature_channels));
    auto [ts, tb] = derive_params(t, o, tf.h, tf.w);
    Var standardized = t.instance_standardize(f, kLtmEps);
    if (spatial) return t.affine_map(standardized, ts, tb);
    return t.channel_affine(standardized, ts, tb);
}

Var LtmBlock::inject(Tape& t, Var f, Var o) const { return t.concat_c(modulate(t, f, o), f); }

UpsampleRep UpsampleRep::create(ParamStore& store, const std::string& name, int channels,
                                std::uint64_t seed) {
    UpsampleRep u;
    u.conv = nn::Conv::create(store, name, channels, channels, 3, 1, 1, seed);
    return u;
}

ScaleRep UpsampleRep::operator()(Tape& t, const ScaleRep& prev) const {
    Var up = t.upsample_nn2(prev.map);
    return ScaleRep{t.leaky_relu(conv(t, up), nn::kLeakySlope), prev.scale_index + 1};
}

ModulationChain ModulationChain::create(ParamStore& store, const std::string& prefix, int n_d,
                                        int map_channels, int n_scales,
                                        const std::vector<SiteSpec>& sites, std::uint64_t seed,
                                        bool spatial) {
    if (n_scales < 1) throw ContractError("ModulationChain: n_scales must be >= 1");
    ModulationChain chain;
    chain.n_d = n_d;
    chain.map_channels = map_channels;
    chain.n_scales_ = n_scales;
    chain.sites = sites;
    chain.project = nn::Conv::create(store, prefix + ".project", n_d, map_channels, 1, 1, 0, seed);
    for (int i = 0; i + 1 < n_scales; ++i)
        chain.ups.push_back(
            UpsampleRep::create(store, prefix + ".up" + std::to_string(i), map_channels, seed));
    for (const auto& site : sites) {
        if (site.scale < 0 || site.scale >= n_scales)
            throw ContractError("ModulationChain: site scale out of range");
        chain.blocks.push_back(LtmBlock::create(store, prefix + ".ltm" + std::to_string(site.scale),
                                                map_channels, site.feature_channels, seed, spatial));
    }
    return chain;
}

const LtmBlock* ModulationChain::block_for(int scale) const {
    for (std::size_t i = 0; i < sites.size(); ++i)
        if (sites[i].scale == scale) return &blocks[i];
    return nullptr;
}

std::vector<ScaleRep> ModulationChain::scale_reps(Tape& t, Var z_q) const {
    const auto& tz = t.val(z_q);
    if (static_cast<int>(tz.size()) != n_d)
        throw DimensionError("ModulationChain: code size " + std::to_string(tz.size()) + " != n_d " +
                             std::to_string(n_d));
    std::vector<ScaleRep> reps;
    // z_q arrives as (1,1,n_d): already the broadcast 1x1 map.
    ScaleRep o0{t.leaky_relu(project(t, z_q), nn::kLeakySlope), 0};
    reps.push_back(o0);
    for (const auto& up : ups) reps.push_back(up(t, reps.back()));
    return reps;
}

}  // namespace nlosim::modulation
