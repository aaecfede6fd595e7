#include "nlosim/nn/params.hpp"

#include <cmath>

#include "nlosim/common.hpp"

namespace nlosim::nn {

ParamId ParamStore::add(const std::string& name, Tensor init) {
    if (by_name_.count(name)) throw ContractError("ParamStore: duplicate parameter name " + name);
    ParamId id = static_cast<ParamId>(arrays_.size());
    arrays_.push_back({name, std::move(init)});
    by_name_[name] = id;
    return id;
}

ParamId ParamStore::id_of(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ContractError("ParamStore: unknown parameter " + name);
    return it->second;
}

bool ParamStore::contains(const std::string& name) const { return by_name_.count(name) > 0; }

std::vector<ParamId> ParamStore::all_ids() const {
    std::vector<ParamId> ids(arrays_.size());
    for (std::size_t i = 0; i < arrays_.size(); ++i) ids[i] = static_cast<ParamId>(i);
    return ids;
}

std::vector<ParamId> ParamStore::ids_with_prefix(const std::string& prefix) const {
    std::vector<ParamId> ids;
    for (std::size_t i = 0; i < arrays_.size(); ++i)
        if (arrays_[i].name.rfind(prefix, 0) == 0) ids.push_back(static_cast<ParamId>(i));
    return ids;
}

std::size_t ParamStore::total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : arrays_) n += e.value.size();
    return n;
}

std::uint64_t ParamStore::content_hash() const {
    // by_name_ iterates sorted; hash name then payload bytes.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, id] : by_name_) {
        h = fnv1a64(name.data(), name.size(), h);
        const Tensor& t = arrays_[static_cast<std::size_t>(id)].value;
        h = fnv1a64(t.v.data(), t.v.size() * sizeof(real_t), h);
    }
    return h;
}

GradBuffer::GradBuffer(const ParamStore& store) {
    grads_.resize(static_cast<std::size_t>(store.count()));
    for (int i = 0; i < store.count(); ++i)
        grads_[static_cast<std::size_t>(i)].assign(store.value(i).size(), real_t(0));
}

void GradBuffer::zero() {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), real_t(0));
}

void GradBuffer::add(const GradBuffer& other) {
    for (std::size_t i = 0; i < grads_.size(); ++i) {
        const auto& src = other.grads_[i];
        auto& dst = grads_[i];
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
}

double GradBuffer::global_norm() const {
    double s = 0.0;
    for (const auto& g : grads_)
        for (real_t x : g) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

void GradBuffer::scale(real_t s) {
    for (auto& g : grads_)
        for (auto& x : g) x *= s;
}

bool GradBuffer::finite() const {
    for (const auto& g : grads_)
        for (real_t x : g)
            if (!std::isfinite(x)) return false;
    return true;
}

Tensor he_normal(int rows, int cols, std::uint64_t seed) {
    Tensor t = Tensor::matrix(rows, cols);
    Rng rng(seed);
    double std = std::sqrt(2.0 / rows);
    for (auto& x : t.v) x = static_cast<real_t>(rng.normal(0.0, std));
    return t;
}

Tensor zeros_vec(int n) { return Tensor::vec(n); }

Tensor gaussian(int h, int w, int c, double stddev, std::uint64_t seed) {
    Tensor t(h, w, c);
    Rng rng(seed);
    for (auto& x : t.v) x = static_cast<real_t>(rng.normal(0.0, stddev));
    return t;
}

}  // namespace nlosim::nn
