#include "nlosim/codebook.hpp"

#include <cmath>

namespace nlosim::codebook {

Codebook Codebook::create(ParamStore& store, const std::string& name, int n_c, int n_d,
                          std::uint64_t seed) {
    if (n_c < 1 || n_d < 1) throw ContractError("Codebook: n_c and n_d must be >= 1");
    Tensor codes = nn::gaussian(n_c, n_d, 1, 1.0, derive_seed(seed, fnv1a64(name), 3));
    for (int i = 0; i < n_c; ++i) {
        double norm = 0.0;
        for (int j = 0; j < n_d; ++j) norm += static_cast<double>(codes.m(i, j)) * codes.m(i, j);
        norm = std::sqrt(std::max(norm, 1e-24));
        for (int j = 0; j < n_d; ++j)
            codes.m(i, j) = static_cast<nn::real_t>(codes.m(i, j) / norm);
    }
    Codebook cb;
    cb.codes = store.add(name + ".codes", std::move(codes));
    cb.n_c = n_c;
    cb.n_d = n_d;
    return cb;
}

void renormalize_rows(ParamStore& store, const Codebook& cb) {
    Tensor& codes = store.value(cb.codes);
    for (int i = 0; i < cb.n_c; ++i) {
        double norm = 0.0;
        for (int j = 0; j < cb.n_d; ++j) norm += static_cast<double>(codes.m(i, j)) * codes.m(i, j);
        norm = std::sqrt(std::max(norm, 1e-24));
        for (int j = 0; j < cb.n_d; ++j)
            codes.m(i, j) = static_cast<nn::real_t>(codes.m(i, j) / norm);
    }
}

QuantizeResult quantize(const LatentCondition& l, const ParamStore& store, const Codebook& cb,
                        QuantizeMode mode, std::optional<int> label) {
    const Tensor& codes = store.value(cb.codes);
    if (l.dim() != cb.n_d)
        throw DimensionError("quantize: latent dim " + std::to_string(l.dim()) + " != n_d " +
                             std::to_string(cb.n_d));
    QuantizeResult out;
    out.mode = mode;
    if (mode == QuantizeMode::train) {
        if (!label || *label < 0 || *label >= cb.n_c)
            throw ContractError("quantize: train mode requires a label in [0, n_c)");
        out.index = *label;
    } else {
        double best = -1.0;
        int best_i = 0;
        for (int i = 0; i < cb.n_c; ++i) {
            double d2 = 0.0;
            for (int j = 0; j < cb.n_d; ++j) {
                double d = static_cast<double>(l.vector.v[static_cast<std::size_t>(j)]) - codes.m(i, j);
                d2 += d * d;
            }
            if (best < 0.0 || d2 < best) {  // strict < keeps the lowest index on ties
                best = d2;
                best_i = i;
            }
        }
        out.index = best_i;
    }
    out.z_q = Tensor::vec(cb.n_d);
    for (int j = 0; j < cb.n_d; ++j) out.z_q.v[static_cast<std::size_t>(j)] = codes.m(out.index, j);
    return out;
}

CondEncoder CondEncoder::create(ParamStore& store, const std::string& prefix, int in_h, int in_w,
                                int in_c, int base_width, int n_d, std::uint64_t seed) {
    constexpr int kStages = 4;
    CondEncoder e;
    e.in_h = in_h;
    e.in_w = in_w;
    e.in_c = in_c;
    e.n_d = n_d;
    e.stem = nn::Conv::create(store, prefix + ".stem", in_c, base_width, 3, 1, 1, seed);
    int c = base_width;
    for (int s = 0; s < kStages; ++s) {
        int cout = std::min(c * 2, base_width * 8);
        e.stages.push_back(nn::Conv::create(store, prefix + ".down" + std::to_string(s), c, cout, 3, 2, 1, seed));
        c = cout;
    }
    e.head = nn::Linear::create(store, prefix + ".head", c, n_d, seed);
    return e;
}

Var CondEncoder::forward(Tape& t, Var y) const {
    const Tensor& ty = t.val(y);
    if (ty.h != in_h || ty.w != in_w || ty.c != in_c)
        throw DimensionError("CondEncoder: input " + ty.shape_str() + ", expected " +
                             std::to_string(in_h) + "x" + std::to_string(in_w) + "x" +
                             std::to_string(in_c));
    Var h = t.leaky_relu(stem(t, y), nn::kLeakySlope);
    for (const auto& st : stages) h = t.leaky_relu(st(t, h), nn::kLeakySlope);
    Var pooled = t.global_avg_pool(h);
    return t.l2_normalize(head(t, pooled));
}

LatentCondition CondEncoder::encode(const ParamStore& store, const Tensor& y) const {
    Tape t(&store, /*track=*/false);
    Var l = forward(t, t.input(y));
    return LatentCondition{t.val(l)};
}

LatentCondition CondEncoder::encode(const ParamStore& store, const ImageGrid& y) const {
    return encode(store, nn::from_image(y));
}

VqLossVars vq_loss(Tape& t, Var l, const Codebook& cb, int label, double tau, double alpha,
                   double beta) {
    if (label < 0 || label >= cb.n_c) throw ContractError("vq_loss: label out of range");
    if (!(tau > 0.0)) throw ContractError("vq_loss: tau must be > 0");
    if (!t.val(l).finite()) throw NumericError("vq_loss: non-finite latent");

    Var codes = t.param(cb.codes);
    if (!t.val(codes).finite()) throw NumericError("vq_loss: non-finite codebook");

    VqLossVars out;
    out.index = label;
    out.z_q = t.row(codes, label);

    // InfoNCE over similarity logits; gradient reaches l and every code.
    Var logits = t.scale(t.matvec(codes, l), static_cast<nn::real_t>(1.0 / tau));
    out.infonce = t.softmax_ce(logits, label);

    // Codebook pull: stop-gradient on l, so only the selected row moves.
    out.codebook_term =
        t.scale(t.sq_norm_diff(t.stop_grad(l), out.z_q), static_cast<nn::real_t>(alpha));
    // Commitment: stop-gradient on the row, so only the encoder moves.
    out.commit_term =
        t.scale(t.sq_norm_diff(t.stop_grad(out.z_q), l), static_cast<nn::real_t>(beta));

    out.total = t.add(t.add(out.infonce, out.codebook_term), out.commit_term);
    return out;
}

double vq_loss_value(const ParamStore& store, const LatentCondition& l, const Codebook& cb,
                     int label, double tau, double alpha, double beta) {
    Tape t(&store, /*track=*/false);
    Var lv = t.input(l.vector);
    auto vars = vq_loss(t, lv, cb, label, tau, alpha, beta);
    return static_cast<double>(t.val(vars.total).v[0]);
}

}  // namespace nlosim::codebook
