#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nlosim/nn/tensor.hpp"

namespace nlosim::nn {

using ParamId = int;

/// Flat registry of named parameter arrays. Names are unique and stable;
/// checkpoints serialize the registry sorted by name, so identical
/// construction order is not required for round-trips.
class ParamStore {
public:
    ParamId add(const std::string& name, Tensor init);
    ParamId id_of(const std::string& name) const;  // throws ContractError if absent
    bool contains(const std::string& name) const;

    Tensor& value(ParamId id) { return arrays_[static_cast<std::size_t>(id)].value; }
    const Tensor& value(ParamId id) const { return arrays_[static_cast<std::size_t>(id)].value; }
    const std::string& name(ParamId id) const { return arrays_[static_cast<std::size_t>(id)].name; }
    int count() const { return static_cast<int>(arrays_.size()); }

    std::vector<ParamId> all_ids() const;
    /// Ids whose name starts with `prefix`.
    std::vector<ParamId> ids_with_prefix(const std::string& prefix) const;

    std::size_t total_scalars() const;
    /// FNV-1a over all arrays in name order; the determinism fingerprint.
    std::uint64_t content_hash() const;

private:
    struct Entry {
        std::string name;
        Tensor value;
    };
    std::vector<Entry> arrays_;
    std::map<std::string, ParamId> by_name_;
};

/// Per-parameter gradient accumulator aligned with a ParamStore.
class GradBuffer {
public:
    explicit GradBuffer(const ParamStore& store);
    void zero();
    std::vector<real_t>& grad(ParamId id) { return grads_[static_cast<std::size_t>(id)]; }
    const std::vector<real_t>& grad(ParamId id) const { return grads_[static_cast<std::size_t>(id)]; }
    /// this += other, elementwise over every parameter.
    void add(const GradBuffer& other);
    int count() const { return static_cast<int>(grads_.size()); }
    /// Global L2 norm over every gradient entry.
    double global_norm() const;
    void scale(real_t s);
    bool finite() const;

private:
    std::vector<std::vector<real_t>> grads_;
};

/// He-normal init for conv/linear weights (fan_in from the weight layout:
/// rows = fan_in, cols = fan_out), zeros for biases.
Tensor he_normal(int rows, int cols, std::uint64_t seed);
Tensor zeros_vec(int n);
Tensor gaussian(int h, int w, int c, double stddev, std::uint64_t seed);

}  // namespace nlosim::nn
