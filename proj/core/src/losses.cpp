#include "nlosim/losses.hpp"

#include <cstdio>

namespace nlosim::losses {

double LossReport::expected_total_g(const LossReport& r, const LossWeights& w) {
    return (r.l1 + w.lambda1 * r.ot) +
           w.lambda_vq * (r.vq_infonce + r.vq_codebook + r.vq_commit) + w.lambda_gan * r.gan_g +
           w.lambda2 * r.perceptual;
}

std::string LossReport::to_json() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "{\"l1\":%.9g,\"ot\":%.9g,\"vq_infonce\":%.9g,\"vq_codebook\":%.9g,"
                  "\"vq_commit\":%.9g,\"gan_g\":%.9g,\"gan_d\":%.9g,\"perceptual\":%.9g,"
                  "\"total_g\":%.9g,\"total_d\":%.9g}",
                  l1, ot, vq_infonce, vq_codebook, vq_commit, gan_g, gan_d, perceptual, total_g,
                  total_d);
    return buf;
}

ReconLossVars recon_loss(Tape& t, Var x, Var x_prime, Var lat_h, Var lat_r, double lambda1) {
    ReconLossVars out;
    out.l1 = t.mean_abs_diff(x_prime, x);
    if (lat_h.valid() && lat_r.valid()) {
        out.ot = t.mean_abs_diff(lat_h, lat_r);
        out.total = t.add(out.l1, t.scale(out.ot, static_cast<nn::real_t>(lambda1)));
    } else {
        out.total = out.l1;
    }
    return out;
}

GanLossVars gan_losses(Tape& t, const std::vector<Var>& d_real, const std::vector<Var>& d_fake) {
    if (d_real.empty() || d_fake.empty() || d_real.size() != d_fake.size())
        throw ContractError("gan_losses: score lists must be non-empty and of equal length");
    std::vector<Var> g_terms, d_terms;
    for (std::size_t k = 0; k < d_fake.size(); ++k) {
        g_terms.push_back(t.scale(d_fake[k], nn::real_t(-1)));
        // -min(0,-1+d_real) = relu(1 - d_real); -min(0,-1-d_fake) = relu(1 + d_fake)
        Var real_hinge = t.relu(t.add_const(t.scale(d_real[k], nn::real_t(-1)), nn::real_t(1)));
        Var fake_hinge = t.relu(t.add_const(d_fake[k], nn::real_t(1)));
        d_terms.push_back(t.add(real_hinge, fake_hinge));
    }
    nn::real_t inv_k = nn::real_t(1) / static_cast<nn::real_t>(d_fake.size());
    GanLossVars out;
    out.g = t.scale(t.add_list(g_terms), inv_k);
    out.d = t.scale(t.add_list(d_terms), inv_k);
    return out;
}

Var perceptual_loss(Tape& t, const networks::PerceptualNet& net, Var y, Var y_prime) {
    if (!t.val(y).same_shape(t.val(y_prime)))
        throw DimensionError("perceptual_loss: shape mismatch");
    auto fy = net.features(t, y);
    auto fp = net.features(t, y_prime);
    std::vector<Var> terms;
    for (std::size_t i = 0; i < fy.size(); ++i) terms.push_back(t.mean_sq_diff(fy[i], fp[i]));
    return t.add_list(terms);
}

}  // namespace nlosim::losses
