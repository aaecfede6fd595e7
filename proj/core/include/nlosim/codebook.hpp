#pragma once

#include <optional>
#include <vector>

#include "nlosim/image.hpp"
#include "nlosim/nn/layers.hpp"

namespace nlosim::codebook {

using nn::ParamId;
using nn::ParamStore;
using nn::Tape;
using nn::Tensor;
using nn::Var;

/// Encoder output l: unit-norm n_d vector summarizing the light transport
/// condition of a projection image.
struct LatentCondition {
    Tensor vector;  // (1,1,n_d), L2-normalized
    int dim() const { return static_cast<int>(vector.size()); }
};

/// n_c x n_d code matrix registered as one parameter array. Rows stay
/// L2-normalized: training renormalizes after every optimizer step.
struct Codebook {
    ParamId codes{-1};
    int n_c = 0;
    int n_d = 0;

    /// Rows drawn from a unit Gaussian then normalized, seed-controlled.
    static Codebook create(ParamStore& store, const std::string& name, int n_c, int n_d,
                           std::uint64_t seed);
};

/// Projects every codebook row back onto the unit sphere (post-update hook).
void renormalize_rows(ParamStore& store, const Codebook& cb);

enum class QuantizeMode { train, test };

struct QuantizeResult {
    Tensor z_q;  // exact copy of the selected codebook row
    int index = -1;
    QuantizeMode mode = QuantizeMode::test;
};

/// Train mode returns the labeled row regardless of distances (label
/// required); test mode returns the nearest row in L2, ties broken by
/// lowest index.
QuantizeResult quantize(const LatentCondition& l, const ParamStore& store, const Codebook& cb,
                        QuantizeMode mode, std::optional<int> label = std::nullopt);

/// The light transport encoder E_c: strided conv encoder (4 downsampling
/// stages), global average pool, linear head to n_d, L2 normalization.
struct CondEncoder {
    nn::Conv stem;
    std::vector<nn::Conv> stages;
    nn::Linear head;
    int in_h = 0, in_w = 0, in_c = 0;
    int n_d = 0;

    static CondEncoder create(ParamStore& store, const std::string& prefix, int in_h, int in_w,
                              int in_c, int base_width, int n_d, std::uint64_t seed);

    /// Tape forward; returns the normalized latent (1,1,n_d).
    Var forward(Tape& t, Var y) const;

    /// Eval-mode convenience (no-grad tape).
    LatentCondition encode(const ParamStore& store, const Tensor& y) const;
    LatentCondition encode(const ParamStore& store, const ImageGrid& y) const;
};

/// Tape-level VQ objective with the routing the formula implies:
///   infonce  = -log softmax(l . z / tau)[label]   (flows to l and all codes)
///   codebook = alpha * || sg[l] - z_label ||^2    (flows only to that row)
///   commit   = beta  * || sg[z_label] - l ||^2    (flows only to l)
struct VqLossVars {
    Var infonce;
    Var codebook_term;  // already scaled by alpha
    Var commit_term;    // already scaled by beta
    Var total;
    Var z_q;  // the selected row, gradient-connected to the codebook
    int index = -1;
};

VqLossVars vq_loss(Tape& t, Var l, const Codebook& cb, int label, double tau, double alpha,
                   double beta);

/// Scalar convenience used by tests and logging (no gradients).
double vq_loss_value(const ParamStore& store, const LatentCondition& l, const Codebook& cb,
                     int label, double tau, double alpha, double beta);

}  // namespace nlosim::codebook
