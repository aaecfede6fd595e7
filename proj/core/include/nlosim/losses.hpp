#pragma once

#include <string>
#include <vector>

#include "nlosim/networks.hpp"

namespace nlosim::losses {

using nn::Tape;
using nn::Var;

/// Objective weights. lambda1 scales the latent term inside the
/// reconstruction loss, lambda2 the perceptual term, lambda_vq and
/// lambda_gan the VQ and adversarial contributions to the generator total:
///   total_g = (l1 + lambda1*ot) + lambda_vq*(infonce + codebook + commit)
///             + lambda_gan*gan_g + lambda2*perceptual
///   total_d = gan_d
struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda_vq = 1.0;
    double lambda_gan = 0.1;
    double tau = 0.07;
    double alpha = 1.0;
    double beta = 0.25;
};

/// Per-step scalar breakdown written to the training log.
struct LossReport {
    double l1 = 0.0;
    double ot = 0.0;
    double vq_infonce = 0.0;
    double vq_codebook = 0.0;
    double vq_commit = 0.0;
    double gan_g = 0.0;
    double gan_d = 0.0;
    double perceptual = 0.0;
    double total_g = 0.0;
    double total_d = 0.0;

    /// Recomputes total_g/total_d from components; the invariant tests
    /// compare these against the logged values.
    static double expected_total_g(const LossReport& r, const LossWeights& w);
    std::string to_json() const;
};

struct ReconLossVars {
    Var l1;
    Var ot;     // unweighted latent term
    Var total;  // l1 + lambda1 * ot
};

/// mean|x - x'| + lambda1 * mean|lat_h - lat_r|. Pass an invalid lat pair
/// (ot dropped) for the no_ot ablation.
ReconLossVars recon_loss(Tape& t, Var x, Var x_prime, Var lat_h, Var lat_r, double lambda1);

struct GanLossVars {
    Var g;  // mean_k[-d_fake_k]
    Var d;  // mean_k[max(0,1-d_real_k) + max(0,1+d_fake_k)]
};

/// Hinge pair over per-scale score lists of equal length.
GanLossVars gan_losses(Tape& t, const std::vector<Var>& d_real, const std::vector<Var>& d_fake);

/// Sum over the frozen feature stages of the mean squared feature distance.
Var perceptual_loss(Tape& t, const networks::PerceptualNet& net, Var y, Var y_prime);

}  // namespace nlosim::losses
