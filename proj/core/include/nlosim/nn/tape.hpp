#pragma once

#include <functional>
#include <vector>

#include "nlosim/nn/params.hpp"
#include "nlosim/nn/tensor.hpp"

namespace nlosim::nn {

struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
};

/// Reverse-mode autodiff tape. One tape per sample and pass; ops append
/// nodes, backward() runs the reverse sweep, and parameter-leaf gradients
/// are then folded into a GradBuffer in node order (deterministic).
///
/// Constructed with track=false the tape records values only — inference
/// mode, no backward closures and no grad storage.
class Tape {
public:
    explicit Tape(const ParamStore* store = nullptr, bool track = true)
        : store_(store), track_(track) {}

    /// Constant leaf. needs_grad=true only when a test wants d(loss)/d(input).
    Var input(Tensor t, bool needs_grad = false);
    /// Parameter leaf; value copied from the bound store.
    Var param(ParamId id);

    const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v.i)].val; }
    /// Gradient of the last backward() target w.r.t. this node.
    const Tensor& grad(Var v) const;
    /// False when no gradient reached the node (identically-zero gradient).
    bool has_grad(Var v) const { return n(v).grad_ready; }
    /// Scalar value of a reduction node at full double precision (reduction
    /// ops accumulate in double; this reads the un-truncated result).
    double scalar_value(Var v) const;
    bool tracking() const { return track_; }

    void backward(Var scalar_loss, real_t seed = real_t(1));
    /// Adds every parameter-leaf gradient into `out` (call after backward).
    void add_param_grads_to(GradBuffer& out) const;

    // ---- elementwise / arithmetic ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, real_t s);
    Var add_const(Var a, real_t c);
    Var add_list(const std::vector<Var>& xs);
    Var relu(Var x);
    Var leaky_relu(Var x, real_t slope);
    Var sigmoid(Var x);
    Var stop_grad(Var x);

    // ---- shape / structure ----
    Var concat_c(Var a, Var b);
    Var slice_c(Var x, int from, int len);
    Var flatten(Var x);
    Var upsample_nn2(Var x);
    Var avgpool2(Var x);
    Var resize_nn(Var x, int out_h, int out_w);
    Var global_avg_pool(Var x);

    // ---- linear algebra ----
    /// x:(h,w,cin), w:(k*k*cin, cout), b:(1,1,cout) or invalid for none.
    Var conv2d(Var x, Var w, Var b, int k, int stride, int pad);
    /// x:(1,1,n), w:(n,m), b:(1,1,m) or invalid.
    Var linear(Var x, Var w, Var b);
    /// m:(n,d), v:(1,1,d) -> (1,1,n)
    Var matvec(Var m, Var v);
    /// m:(n,d) -> (1,1,d); gradient reaches only that row.
    Var row(Var m, int r);
    Var dot(Var a, Var b);
    Var l2_normalize(Var v);

    // ---- normalization / modulation ----
    /// Per-channel (x - mean) / sqrt(var + eps) over the spatial extent.
    Var instance_standardize(Var x, real_t eps);
    /// y[.,.,ch] = s[ch] * x[.,.,ch] + t[ch]; s,t are (1,1,c).
    Var channel_affine(Var x, Var s, Var t);
    /// Elementwise y = s*x + t with full-size maps (spatial modulation).
    Var affine_map(Var x, Var s, Var t);

    // ---- reductions / losses ----
    Var mean_all(Var x);
    Var mean_abs_diff(Var a, Var b);
    Var mean_sq_diff(Var a, Var b);
    /// Sum of squared differences (no mean).
    Var sq_norm_diff(Var a, Var b);
    /// logits:(1,1,n), 0 <= label < n; returns -log softmax(logits)[label].
    Var softmax_ce(Var logits, int label);

private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void()> back;  // empty for leaves / untracked
        ParamId pid = -1;
        bool needs_grad = false;
        bool grad_ready = false;
        bool has_scalar = false;
        double scalar = 0.0;  // double-precision copy for reduction outputs
    };

    Node& n(Var v) { return nodes_[static_cast<std::size_t>(v.i)]; }
    const Node& n(Var v) const { return nodes_[static_cast<std::size_t>(v.i)]; }
    Var push(Tensor val, bool needs_grad);
    void set_scalar(Var v, double d);
    Tensor& grad_buf(Var v);
    bool any_grad(std::initializer_list<Var> vs) const;

    const ParamStore* store_;
    bool track_;
    std::vector<Node> nodes_;
};

}  // namespace nlosim::nn
