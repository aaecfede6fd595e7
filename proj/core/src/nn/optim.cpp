#include "nlosim/nn/optim.hpp"

#include <cmath>

#include "nlosim/common.hpp"

namespace nlosim::nn {

double cosine_lr(double lr_start, double lr_end, std::int64_t step, std::int64_t total_steps) {
    if (total_steps <= 0) return lr_start;
    if (step < 0) step = 0;
    if (step > total_steps) step = total_steps;
    double phase = M_PI * static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(phase));
}

Adam::Adam(ParamStore& store, std::vector<ParamId> params, AdamSettings settings)
    : store_(store), params_(std::move(params)), settings_(settings) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        std::size_t sz = store_.value(params_[i]).size();
        m_[i].assign(sz, 0.0);
        v_[i].assign(sz, 0.0);
    }
}

void Adam::step(const GradBuffer& grads, double lr) {
    ++t_;
    const double b1 = settings_.beta1;
    const double b2 = settings_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = store_.value(params_[i]);
        const auto& g = grads.grad(params_[i]);
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < p.v.size(); ++k) {
            double gk = g[k];
            if (settings_.weight_decay != 0.0 && !settings_.decoupled) gk += settings_.weight_decay * p.v[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            double upd = lr * mhat / (std::sqrt(vhat) + settings_.eps);
            if (settings_.weight_decay != 0.0 && settings_.decoupled)
                upd += lr * settings_.weight_decay * p.v[k];
            p.v[k] = static_cast<real_t>(p.v[k] - upd);
        }
    }
}

std::map<std::string, std::vector<double>> Adam::export_state() const {
    std::map<std::string, std::vector<double>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const std::string& name = store_.name(params_[i]);
        out[name + ".m"] = m_[i];
        out[name + ".v"] = v_[i];
    }
    out["__step"] = {static_cast<double>(t_)};
    return out;
}

void Adam::import_state(const std::map<std::string, std::vector<double>>& state) {
    auto it = state.find("__step");
    if (it == state.end()) throw IntegrityError("Adam state missing __step");
    t_ = static_cast<std::int64_t>(it->second.at(0));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const std::string& name = store_.name(params_[i]);
        auto mi = state.find(name + ".m");
        auto vi = state.find(name + ".v");
        if (mi == state.end() || vi == state.end())
            throw IntegrityError("Adam state missing moments for " + name);
        if (mi->second.size() != m_[i].size() || vi->second.size() != v_[i].size())
            throw IntegrityError("Adam state size mismatch for " + name);
        m_[i] = mi->second;
        v_[i] = vi->second;
    }
}

double clip_global_norm(GradBuffer& grads, double max_norm) {
    double norm = grads.global_norm();
    if (max_norm > 0.0 && norm > max_norm)
        grads.scale(static_cast<real_t>(max_norm / norm));
    return norm;
}

}  // namespace nlosim::nn
