#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nlosim/codebook.hpp"
#include "nlosim/modulation.hpp"

namespace nlosim::networks {

using nn::ParamStore;
using nn::Tape;
using nn::Tensor;
using nn::Var;

/// Table-style ablation axes. Composable; no_joint removes the reprojection
/// network and both adversarial losses, no_modulation removes the whole
/// condition branch (the condition-agnostic baseline when paired with
/// no_vq), no_ot drops the latent loss and unfreezes the decoder.
struct AblationFlags {
    bool no_ot = false;
    bool no_joint = false;
    bool single_scale_modulation = false;
    bool concat_modulation = false;
    bool no_vq = false;
    bool no_modulation = false;

    bool operator==(const AblationFlags&) const = default;
    std::string canonical_text() const;
};

/// Architecture descriptor: fully determines every parameter shape.
struct ArchConfig {
    int img_h = 16;
    int img_w = 16;
    int img_c = 1;
    int stages = 4;          // S downsampling stages in E_h/E_r/G_p
    int base_width = 32;     // stem width; doubles per stage up to width_cap
    int width_cap = 256;
    int latent_channels = 64;
    int n_d = 128;           // condition code dimensionality
    int cond_width = 32;     // E_c stem width
    int cond_map_width = 32; // channels of the upsampled condition maps O_i
    int disc_width = 32;
    int percep_width = 8;
    bool ltm_spatial = false;

    bool operator==(const ArchConfig&) const = default;

    void validate() const;
    /// Channel width after stage k (k=0 is the stem).
    int width_at(int k) const;
    /// Bottleneck shape (h, w, c) shared by E_h(x) and E_r(y).
    std::array<int, 3> latent_shape() const;

    std::string canonical_text() const;
    static ArchConfig parse_text(const std::string& text);
};

// ---------------------------------------------------------------- plain nets

struct EncoderStage {
    nn::Conv down;  // stride 2
    nn::Conv conv;  // stride 1
};

struct Encoder {
    nn::Conv stem;
    std::vector<EncoderStage> stages;
    nn::Conv to_latent;

    static Encoder create(ParamStore& store, const std::string& prefix, const ArchConfig& a,
                          std::uint64_t seed);
    /// Bottleneck var; when `features` is non-null it receives F_0..F_{S-1}
    /// (stem output and each non-final stage output).
    Var forward(Tape& t, Var x, std::vector<Var>* features = nullptr) const;
};

struct DecoderStage {
    nn::Conv conv1;  // after nearest 2x upsample
    nn::Conv conv2;
};

struct Decoder {
    nn::Conv from_latent;
    std::vector<DecoderStage> stages;
    nn::Conv to_img;

    static Decoder create(ParamStore& store, const std::string& prefix, const ArchConfig& a,
                          std::uint64_t seed);
    Var forward(Tape& t, Var latent) const;  // sigmoid image output
};

/// Hidden-image autoencoder; the decoder is reused as the decoder of the
/// reconstruction network.
struct Autoencoder {
    Encoder eh;
    Decoder dh;

    static Autoencoder create(ParamStore& store, const ArchConfig& a, std::uint64_t seed);
};

struct AeOut {
    Var latent;
    Var xhat;
};
AeOut autoencoder_forward(Tape& t, const Autoencoder& ae, Var x);

// ------------------------------------------------------- modulated networks

/// How condition information enters the generators.
struct ModPlan {
    bool enabled = true;        // false: condition-agnostic
    bool concat_kind = false;   // true: concat + residual block instead of LTM
    bool deepest_only = false;  // true: single injection at the deepest scale

    static ModPlan from_flags(const AblationFlags& f);
    bool active_at(int site, int n_sites) const {
        return enabled && (!deepest_only || site == n_sites - 1);
    }
};

/// Concat-modulation block: resize O to the feature resolution, concatenate,
/// and fuse through a residual pair of convolutions (channel count kept).
struct ConcatModBlock {
    nn::Conv a;
    nn::Conv b;
    int feature_channels = 0;

    static ConcatModBlock create(ParamStore& store, const std::string& name, int map_channels,
                                 int feature_channels, std::uint64_t seed);
    Var apply(Tape& t, Var f, Var o) const;
};

/// Encoder of the reconstruction network: the hidden-image encoder skeleton
/// with condition injection between blocks. Injection at site i transforms
/// F_i before stage i+1 consumes it; LTM injection doubles the channels.
struct RecEncoder {
    nn::Conv stem;
    std::vector<EncoderStage> stages;
    nn::Conv to_latent;
    ModPlan plan;

    static RecEncoder create(ParamStore& store, const std::string& prefix, const ArchConfig& a,
                             const ModPlan& plan, std::uint64_t seed);
};

struct UNetDecoderStage {
    nn::Conv up_conv;
    nn::Conv fuse;
};

/// Reprojection network: encoder-decoder over the hidden image with
/// modulated skip connections.
struct Reprojector {
    Encoder enc;
    std::vector<UNetDecoderStage> dec;
    nn::Conv to_img;
    ModPlan plan;

    static Reprojector create(ParamStore& store, const std::string& prefix, const ArchConfig& a,
                              const ModPlan& plan, std::uint64_t seed);
};

/// Two patch heads at full and half resolution; each returns the mean
/// realness score of its patch map.
struct Discriminator {
    struct Head {
        nn::Conv c1, c2, c3;
    };
    std::vector<Head> heads;
    int wall_h = 0, wall_w = 0;

    static Discriminator create(ParamStore& store, const std::string& prefix, const ArchConfig& a,
                                std::uint64_t seed);
};

/// Frozen random feature extractor for the perceptual loss: three strided
/// conv stages, never optimized.
struct PerceptualNet {
    std::vector<nn::Conv> convs;

    static PerceptualNet create(ParamStore& store, const std::string& prefix, const ArchConfig& a,
                                std::uint64_t seed);
    std::vector<Var> features(Tape& t, Var img) const;
};

// ---------------------------------------------------------------- the bundle

/// Every network of the system over one shared parameter store, built
/// deterministically from (arch, flags, n_c, seed). Absent components
/// (per flags) contribute no parameters.
struct ModelBundle {
    ArchConfig arch;
    AblationFlags flags;
    int n_c = 0;
    ParamStore store;

    Autoencoder ae;
    bool has_cond = false;  // E_c + chains exist (not no_modulation)
    bool has_vq = false;    // codebook exists (has_cond and not no_vq)
    bool has_joint = false; // G_p + discriminator + perceptual exist
    codebook::CondEncoder ec;
    codebook::Codebook cb;
    modulation::ModulationChain chain_r, chain_p;
    std::vector<ConcatModBlock> cmods_r, cmods_p;  // concat-kind blocks per site
    RecEncoder er;
    Reprojector gp;
    Discriminator disc;
    PerceptualNet percep;
};

std::unique_ptr<ModelBundle> build_model(const ArchConfig& arch, const AblationFlags& flags,
                                         int n_c, std::uint64_t seed);

/// Next-block input at one injection site: the LTM path concatenates
/// [modulated || original], the concat path keeps the channel count.
Var apply_injection(Tape& t, const ModelBundle& m, bool reconstruction_side, int site, Var f,
                    const std::vector<modulation::ScaleRep>& reps);

struct ReconOut {
    Var x_prime;
    Var latent;
};

/// G_r: modulated encoder over the projection, decoder D_h (shared with the
/// autoencoder). `z` is the (1,1,n_d) condition code; pass an invalid Var
/// in condition-agnostic mode.
ReconOut reconstruct_forward(Tape& t, const ModelBundle& m, Var y, Var z);

/// G_p: modulated-skip encoder-decoder over the hidden image.
Var reproject_forward(Tape& t, const ModelBundle& m, Var x, Var z);

/// Scores for the (hidden, projection-like) pair, one per scale (K=2).
std::vector<Var> discriminate_forward(Tape& t, const ModelBundle& m, Var x, Var y_like);

// -------------------------------------------------------- eval conveniences

/// Condition code for a projection in eval mode: E_c then test-time
/// quantization (or the raw latent with no_vq). Returns an invalid result
/// (index -1, empty z) in condition-agnostic mode.
codebook::QuantizeResult infer_code(const ModelBundle& m, const ImageGrid& y);

ImageGrid run_reconstruct(const ModelBundle& m, const ImageGrid& y);
ImageGrid run_reconstruct_with_code(const ModelBundle& m, const ImageGrid& y, const Tensor& z);
ImageGrid run_reproject(const ModelBundle& m, const ImageGrid& x, const Tensor& z);
ImageGrid run_autoencode(const ModelBundle& m, const ImageGrid& x);

}  // namespace nlosim::networks
