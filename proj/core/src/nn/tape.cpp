#include "nlosim/nn/tape.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "nlosim/common.hpp"

namespace nlosim::nn {

namespace {

using RowMat = Eigen::Matrix<real_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
}

int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

/// Gathers 3x3 (or kxk) patches into a (pixels x k*k*cin) matrix.
void im2col(const Tensor& x, int k, int stride, int pad, RowMat& cols) {
    const int ho = conv_out_dim(x.h, k, stride, pad);
    const int wo = conv_out_dim(x.w, k, stride, pad);
    cols.setZero(ho * wo, k * k * x.c);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
            real_t* dst = cols.data() + (static_cast<std::size_t>(oy) * wo + ox) * cols.cols();
            for (int ky = 0; ky < k; ++ky) {
                int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= x.h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= x.w) continue;
                    const real_t* src = x.v.data() + (static_cast<std::size_t>(iy) * x.w + ix) * x.c;
                    std::copy(src, src + x.c, dst + (static_cast<std::size_t>(ky) * k + kx) * x.c);
                }
            }
        }
}

/// Scatter-adds column gradients back onto the input grid.
void col2im(const RowMat& gcols, int k, int stride, int pad, Tensor& gx) {
    const int ho = conv_out_dim(gx.h, k, stride, pad);
    const int wo = conv_out_dim(gx.w, k, stride, pad);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
            const real_t* src = gcols.data() + (static_cast<std::size_t>(oy) * wo + ox) * gcols.cols();
            for (int ky = 0; ky < k; ++ky) {
                int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= gx.h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= gx.w) continue;
                    real_t* dst = gx.v.data() + (static_cast<std::size_t>(iy) * gx.w + ix) * gx.c;
                    const real_t* s = src + (static_cast<std::size_t>(ky) * k + kx) * gx.c;
                    for (int ci = 0; ci < gx.c; ++ci) dst[ci] += s[ci];
                }
            }
        }
}

}  // namespace

Var Tape::push(Tensor val, bool needs_grad) {
    Node node;
    node.val = std::move(val);
    node.needs_grad = track_ && needs_grad;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Tensor t, bool needs_grad) { return push(std::move(t), needs_grad); }

Var Tape::param(ParamId id) {
    if (!store_) throw ContractError("Tape: param() requires a bound ParamStore");
    Var v = push(store_->value(id), true);
    n(v).pid = id;
    return v;
}

const Tensor& Tape::grad(Var v) const {
    const Node& node = n(v);
    if (!node.grad_ready) throw ContractError("Tape: gradient not computed for this node");
    return node.grad;
}

double Tape::scalar_value(Var v) const {
    const Node& node = n(v);
    if (node.val.size() != 1) throw ContractError("Tape: scalar_value on a non-scalar node");
    return node.has_scalar ? node.scalar : static_cast<double>(node.val.v[0]);
}

void Tape::set_scalar(Var v, double d) {
    Node& node = n(v);
    node.has_scalar = true;
    node.scalar = d;
}

Tensor& Tape::grad_buf(Var v) {
    Node& node = n(v);
    if (!node.grad_ready) {
        node.grad = Tensor(node.val.h, node.val.w, node.val.c);
        node.grad_ready = true;
    }
    return node.grad;
}

bool Tape::any_grad(std::initializer_list<Var> vs) const {
    if (!track_) return false;
    for (Var v : vs)
        if (v.valid() && n(v).needs_grad) return true;
    return false;
}

void Tape::backward(Var scalar_loss, real_t seed) {
    Node& loss = n(scalar_loss);
    if (loss.val.size() != 1) throw ContractError("Tape: backward target must be scalar");
    if (!track_) throw ContractError("Tape: backward on a non-tracking tape");
    grad_buf(scalar_loss).v[0] = seed;
    for (int i = scalar_loss.i; i >= 0; --i) {
        Node& node = nodes_[static_cast<std::size_t>(i)];
        if (node.grad_ready && node.back) node.back();
    }
}

void Tape::add_param_grads_to(GradBuffer& out) const {
    for (const Node& node : nodes_) {
        if (node.pid < 0 || !node.grad_ready) continue;
        auto& dst = out.grad(node.pid);
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad.v[k];
    }
}

// ---------------------------------------------------------------- arithmetic

Var Tape::add(Var a, Var b) {
    check_same_shape(val(a), val(b), "add");
    Tensor out = val(a);
    const Tensor& tb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += tb.v[i];
    Var y = push(std::move(out), any_grad({a, b}));
    if (n(y).needs_grad)
        n(y).back = [this, a, b, y] {
            const Tensor& g = n(y).grad;
            if (n(a).needs_grad) {
                Tensor& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
            }
            if (n(b).needs_grad) {
                Tensor& gb = grad_buf(b);
                for (std::size_t i = 0; i < g.size(); ++i) gb.v[i] += g.v[i];
            }
        };
    return y;
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(val(a), val(b), "sub");
    Tensor out = val(a);
    const Tensor& tb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= tb.v[i];
    Var y = push(std::move(out), any_grad({a, b}));
    if (n(y).needs_grad)
        n(y).back = [this, a, b, y] {
            const Tensor& g = n(y).grad;
            if (n(a).needs_grad) {
                Tensor& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
            }
            if (n(b).needs_grad) {
                Tensor& gb = grad_buf(b);
                for (std::size_t i = 0; i < g.size(); ++i) gb.v[i] -= g.v[i];
            }
        };
    return y;
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(val(a), val(b), "mul");
    Tensor out = val(a);
    const Tensor& tb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= tb.v[i];
    Var y = push(std::move(out), any_grad({a, b}));
    if (n(y).needs_grad)
        n(y).back = [this, a, b, y] {
            const Tensor& g = n(y).grad;
            if (n(a).needs_grad) {
                Tensor& ga = grad_buf(a);
                const Tensor& vb = val(b);
                for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * vb.v[i];
            }
            if (n(b).needs_grad) {
                Tensor& gb = grad_buf(b);
                const Tensor& va = val(a);
                for (std::size_t i = 0; i < g.size(); ++i) gb.v[i] += g.v[i] * va.v[i];
            }
        };
    return y;
}

Var Tape::scale(Var a, real_t s) {
    Tensor out = val(a);
    for (auto& x : out.v) x *= s;
    Var y = push(std::move(out), any_grad({a}));
    if (n(y).needs_grad)
        n(y).back = [this, a, y, s] {
            const Tensor& g = n(y).grad;
            Tensor& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += s * g.v[i];
        };
    return y;
}

Var Tape::add_const(Var a, real_t c) {
    Tensor out = val(a);
    for (auto& x : out.v) x += c;
    Var y = push(std::move(out), any_grad({a}));
    if (n(y).needs_grad)
        n(y).back = [this, a, y] {
            const Tensor& g = n(y).grad;
            Tensor& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
        };
    return y;
}

Var Tape::add_list(const std::vector<Var>& xs) {
    if (xs.empty()) throw ContractError("add_list: empty");
    Var acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

Var Tape::relu(Var x) { return leaky_relu(x, real_t(0)); }

Var Tape::leaky_relu(Var x, real_t slope) {
    Tensor out = val(x);
    for (auto& v : out.v)
        if (v < 0) v *= slope;
    Var y = push(std::move(out), any_grad({x}));
    if (n(y).needs_grad)
        n(y).back = [this, x, y, slope] {
            const Tensor& g = n(y).grad;
            const Tensor& vx = val(x);
            Tensor& gx = grad_buf(x);
            for (std::size_t i = 0; i < g.size(); ++i)
                gx.v[i] += vx.v[i] > 0 ? g.v[i] : slope * g.v[i];
        };
    return y;
}

Var Tape::sigmoid(Var x) {
    Tensor out = val(x);
    for (auto& v : out.v) v = real_t(1) / (real_t(1) + std::exp(-v));
    Var y = push(std::move(out), any_grad({x}));
    if (n(y).needs_grad)
        n(y).back = [this, x, y] {
            const Tensor& g = n(y).grad;
            const Tensor& vy = val(y);
            Tensor& gx = grad_buf(x);
            for (std::size_t i = 0; i < g.size(); ++i)
                gx.v[i] += g.v[i] * vy.v[i] * (real_t(1) - vy.v[i]);
        };
    return y;
}

Var Tape::stop_grad(Var x) { return push(val(x), false); }

// ---------------------------------------------------------------- structure

Var Tape::concat_c(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.h != tb.h || ta.w != tb.w)
        throw DimensionError("concat_c: spatial mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out(ta.h, ta.w, ta.c + tb.c);
    for (int p = 0; p < ta.pixels(); ++p) {
        std::copy(ta.v.begin() + static_cast<std::ptrdiff_t>(p) * ta.c,
                  ta.v.begin() + static_cast<std::ptrdiff_t>(p + 1) * ta.c,
                  out.v.begin() + static_cast<std::ptrdiff_t>(p) * out.c);
        std::copy(tb.v.begin() + static_cast<std::ptrdiff_t>(p) * tb.c,
                  tb.v.begin() + static_cast<std::ptrdiff_t>(p + 1) * tb.c,
                  out.v.begin() + static_cast<std::ptrdiff_t>(p) * out.c + ta.c);
    }
    Var y = push(std::move(out), any_grad({a, b}));
    if (n(y).needs_grad)
        n(y).back = [this, a, b, y] {
            const Tensor& g = n(y).grad;
            int ca = val(a).c, cb = val(b).c;
            if (n(a).needs_grad) {
                Tensor& ga = grad_buf(a);
                for (int p = 0; p < ga.pixels(); ++p)
                    for (int ci = 0; ci < ca; ++ci)
                        ga.v[static_cast<std::size_t>(p) * ca + ci] +=
                            g.v[static_cast<std::size_t>(p) * (ca + cb) + ci];
            }
            if (n(b).needs_grad) {
                Tensor& gb = grad_buf(b);
                for (int p = 0; p < gb.pixels(); ++p)
                    for (int ci = 0; ci < cb; ++ci)
                        gb.v[static_cast<std::size_t>(p) * cb + ci] +=
                            g.v[static_cast<std::size_t>(p) * (ca + cb) + ca + ci];
            }
        };
    return y;
}

Var Tape::slice_c(Var x, int from, int len) {
    const Tensor& tx = val(x);
    if (from < 0 || from + len > tx.c) throw DimensionError("slice_c: channel range out of bounds");
    Tensor out(tx.h, tx.w, len);
    for (int p = 0; p < tx.pixels(); ++p)
        for (int ci = 0; ci < len; ++ci)
            out.v[static_cast<std::size_t>(p) * len + ci] =
                tx.v[static_cast<std::size_t>(p) * tx.c + from + ci];
    Var y = push(std::move(out), any_grad({x}));
    if (n(y).needs_grad)
        n(y).back = [this, x, y, from, len] {
            const Tensor& g = n(y).grad;
            Tensor& gx = grad_buf(x);
            for (int p = 0; p < gx.pixels(); ++p)
                for (int ci = 0; ci < len; ++ci)
                    gx.v[static_cast<std::size_t>(p) * gx.c + from + ci] +=
                        g.v[static_cast<std::size_t>(p) * len + ci];
        };
    return y;
}

Var Tape::flatten(Var x) {
    const Tensor& tx = val(x);
    Tensor out = Tensor::vec(static_cast<int>(tx.size()));
    out.v = tx.v;
    Var y = push(std::move(out), any_grad({x}));
    if (n(y).needs_grad)
        n(y).back = [this, x, y] {
            const Tensor& g = n(y).grad;
            Tensor& gx = grad_buf(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i];
        };
    return y;
}

Var Tape::upsample_nn2(Var x) {
    const Tensor& tx = val(x);
    Tensor out(tx.h * 2, tx.w * 2, tx.c);
    for (int y0 = 0; y0 < out.h; ++y0)
        for (int x0 = 0; x0 < out.w; ++x0)
            for (int ci = 0; ci < out.c; ++ci) out.at(y0, x0, ci) = tx.at(y0 / 2, x0 / 2, ci);
    Var y = push(std::move(out), any_grad({x}));
    if (n(y).needs_grad)
        n(y).back = [this, x, y] {
            const Tensor& g = n(y).grad;
            Tensor& gx = grad_buf(x);
            for (int y0 = 0; y0 < g.h; ++y0)
                for (int x0 = 0; x0 < g.w; ++x0)
                    for (int ci = 0; ci < g.c; ++ci) gx.at(y0 / 2, x0 / 2, ci) += g.at(y0, x0, ci);
        };
    return y;
}

Var Tape::avgpool2(Var x) {
    const Tensor& tx = val(x);
    if (tx.h % 2 != 0 || tx.w % 2 != 0)
        throw DimensionError("avgpool2: odd spatial size " + tx.shape_str());
    Tensor out(tx.h / 2, tx.w / 2, tx.c);
    for (int y0 = 0; y0 < out.h; ++y0)
        for (int x0 = 0; x0 < out.w; ++x0)
            for (int ci = 0; ci < out.c; ++ci)
                out.at(y0, x0, ci) =
                    (tx.at(2 * y0, 2 * x0, ci) + tx.at(2 * y0, 2 * x0 + 1, ci) +
                     tx.at(2 * y0 + 1, 2 * x0, ci) + tx.at(2 * y0 + 1, 2 * x0 + 1, ci)) /
                    real_t(4);
    Var y = push(std::move(out), any_grad({x}));
    if (n(y).needs_grad)
        n(y).back = [this, x, y] {
            const Tensor& g = n(y).grad;
            Tensor& gx = grad_buf(x);
            for (int y0 = 0; y0 < g.h; ++y0)
                for (int x0 = 0; x0 < g.w; ++x0)
                    for (int ci = 0; ci < g.c; ++ci) {
                        real_t q = g.at(y0, x0, ci) / real_t(4);
                        gx.at(2 * y0, 2 * x0, ci) += q;
                        gx.at(2 * y0, 2 * x0 + 1, ci) += q;
                        gx.at(2 * y0 + 1, 2 * x0, ci) += q;
                        gx.at(2 * y0 + 1, 2 * x0 + 1, ci) += q;
                    }
        };
    return y;
}

Var Tape::resize_nn(Var x, int out_h, int out_w) {
    const Tensor& tx = val(x);
    if (tx.h == out_h && tx.w == out_w) return x;
    Tensor out(out_h, out_w, tx.c);
    for (int y0 = 0; y0 < out_h; ++y0) {
        int iy = static_cast<int>((static_cast<long long>(y0) * tx.h) / out_h);
        for (int x0 = 0; x0 < out_w; ++x0) {
            int ix = static_cast<int>((static_cast<long long>(x0) * tx.w) / out_w);
            for (int ci = 0; ci < tx.c; ++ci) out.at(y0, x0, ci) = tx.at(iy, ix, ci);
        }
    }
    Var y = push(std::move(out), any_grad({x}));
    if (n(y).needs_grad)
        n(y).back = [this, x, y, out_h, out_w] {
            const Tensor& g = n(y).grad;
            Tensor& gx = grad_buf(x);
            for (int y0 = 0; y0 < out_h; ++y0) {
                int iy = static_cast<int>((static_cast<long long>(y0) * gx.h) / out_h);
                for (int x0 = 0; x0 < out_w; ++x0) {
                    int ix = static_cast<int>((static_cast<long long>(x0) * gx.w) / out_w);
                    for (int ci = 0; ci < gx.c; ++ci) gx.at(iy, ix, ci) += g.at(y0, x0, ci);
                }
            }
        };
    return y;
}

Var Tape::global_avg_pool(Var x) {
    const Tensor& tx = val(x);
    Tensor out = Tensor::vec(tx.c);
    const int np = tx.pixels();
    for (int ci = 0; ci < tx.c; ++ci) {
        double s = 0.0;
        for (int p = 0; p < np; ++p) s += tx.v[static_cast<std::size_t>(p) * tx.c + ci];
        out.v[static_cast<std::size_t>(ci)] = static_cast<real_t>(s / np);
    }
    Var y = push(std::move(out), any_grad({x}));
    if (n(y).needs_grad)
        n(y).back = [this, x, y] {
            const Tensor& g = n(y).grad;
            Tensor& gx = grad_buf(x);
            const int np = gx.pixels();
            for (int ci = 0; ci < gx.c; ++ci) {
                real_t q = g.v[static_cast<std::size_t>(ci)] / static_cast<real_t>(np);
                for (int p = 0; p < np; ++p) gx.v[static_cast<std::size_t>(p) * gx.c + ci] += q;
            }
        };
    return y;
}

// ---------------------------------------------------------------- linear algebra

Var Tape::conv2d(Var x, Var w, Var b, int k, int stride, int pad) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tw.h != k * k * tx.c)
        throw DimensionError("conv2d: weight rows " + std::to_string(tw.h) + " != k*k*cin " +
                             std::to_string(k * k * tx.c));
    const int cout = tw.w;
    if (b.valid() && val(b).size() != static_cast<std::size_t>(cout))
        throw DimensionError("conv2d: bias size mismatch");
    const int ho = conv_out_dim(tx.h, k, stride, pad);
    const int wo = conv_out_dim(tx.w, k, stride, pad);
    if (ho <= 0 || wo <= 0) throw DimensionError("conv2d: output would be empty");

    auto cols = std::make_shared<RowMat>();
    im2col(tx, k, stride, pad, *cols);

    Tensor out(ho, wo, cout);
    MapMat y_m(out.v.data(), ho * wo, cout);
    CMapMat w_m(tw.v.data(), tw.h, tw.w);
    y_m.noalias() = (*cols) * w_m;
    if (b.valid()) {
        const Tensor& tb = val(b);
        for (int p = 0; p < ho * wo; ++p)
            for (int ci = 0; ci < cout; ++ci)
                out.v[static_cast<std::size_t>(p) * cout + ci] += tb.v[static_cast<std::size_t>(ci)];
    }
    Var y = push(std::move(out), any_grad({x, w, b}));
    if (n(y).needs_grad)
        n(y).back = [this, x, w, b, y, k, stride, pad, cols] {
            const Tensor& g = n(y).grad;
            const int cout = val(w).w;
            CMapMat g_m(g.v.data(), g.pixels(), cout);
            if (n(w).needs_grad) {
                Tensor& gw = grad_buf(w);
                MapMat gw_m(gw.v.data(), gw.h, gw.w);
                gw_m.noalias() += cols->transpose() * g_m;
            }
            if (b.valid() && n(b).needs_grad) {
                Tensor& gb = grad_buf(b);
                for (int ci = 0; ci < cout; ++ci)
                    gb.v[static_cast<std::size_t>(ci)] += g_m.col(ci).sum();
            }
            if (n(x).needs_grad) {
                const Tensor& tw = val(w);
                CMapMat w_m(tw.v.data(), tw.h, tw.w);
                RowMat gcols = g_m * w_m.transpose();
                col2im(gcols, k, stride, pad, grad_buf(x));
            }
        };
    return y;
}

Var Tape::linear(Var x, Var w, Var b) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (static_cast<int>(tx.size()) != tw.h)
        throw DimensionError("linear: input size " + std::to_string(tx.size()) + " != weight rows " +
                             std::to_string(tw.h));
    Tensor out = Tensor::vec(tw.w);
    CMapMat w_m(tw.v.data(), tw.h, tw.w);
    Eigen::Map<const Eigen::Matrix<real_t, 1, Eigen::Dynamic>> x_m(tx.v.data(),
                                                                   static_cast<Eigen::Index>(tx.size()));
    Eigen::Map<Eigen::Matrix<real_t, 1, Eigen::Dynamic>> y_m(out.v.data(), tw.w);
    y_m.noalias() = x_m * w_m;
    if (b.valid()) {
        const Tensor& tb = val(b);
        for (int i = 0; i < tw.w; ++i) out.v[static_cast<std::size_t>(i)] += tb.v[static_cast<std::size_t>(i)];
    }
    Var y = push(std::move(out), any_grad({x, w, b}));
    if (n(y).needs_grad)
        n(y).back = [this, x, w, b, y] {
            const Tensor& g = n(y).grad;
            const Tensor& tx = val(x);
            const Tensor& tw = val(w);
            Eigen::Map<const Eigen::Matrix<real_t, 1, Eigen::Dynamic>> g_m(
                g.v.data(), static_cast<Eigen::Index>(g.size()));
            if (n(w).needs_grad) {
                Tensor& gw = grad_buf(w);
                MapMat gw_m(gw.v.data(), gw.h, gw.w);
                Eigen::Map<const Eigen::Matrix<real_t, Eigen::Dynamic, 1>> x_col(
                    tx.v.data(), static_cast<Eigen::Index>(tx.size()));
                gw_m.noalias() += x_col * g_m;
            }
            if (b.valid() && n(b).needs_grad) {
                Tensor& gb = grad_buf(b);
                for (std::size_t i = 0; i < g.size(); ++i) gb.v[i] += g.v[i];
            }
            if (n(x).needs_grad) {
                Tensor& gx = grad_buf(x);
                CMapMat w_m(tw.v.data(), tw.h, tw.w);
                Eigen::Map<Eigen::Matrix<real_t, Eigen::Dynamic, 1>> gx_m(
                    gx.v.data(), static_cast<Eigen::Index>(gx.size()));
                Eigen::Map<const Eigen::Matrix<real_t, Eigen::Dynamic, 1>> g_col(
                    g.v.data(), static_cast<Eigen::Index>(g.size()));
                gx_m.noalias() += w_m * g_col;
            }
        };
    return y;
}

Var Tape::matvec(Var m, Var v) {
    const Tensor& tm = val(m);
    const Tensor& tv = val(v);
    if (static_cast<int>(tv.size()) != tm.w)
        throw DimensionError("matvec: vector size != matrix cols");
    Tensor out = Tensor::vec(tm.h);
    CMapMat m_m(tm.v.data(), tm.h, tm.w);
    Eigen::Map<const Eigen::Matrix<real_t, Eigen::Dynamic, 1>> v_m(tv.v.data(), tm.w);
    Eigen::Map<Eigen::Matrix<real_t, Eigen::Dynamic, 1>> y_m(out.v.data(), tm.h);
    y_m.noalias() = m_m * v_m;
    Var y = push(std::move(out), any_grad({m, v}));
    if (n(y).needs_grad)
        n(y).back = [this, m, v, y] {
            const Tensor& g = n(y).grad;
            const Tensor& tm = val(m);
            const Tensor& tv = val(v);
            Eigen::Map<const Eigen::Matrix<real_t, Eigen::Dynamic, 1>> g_m(
                g.v.data(), static_cast<Eigen::Index>(g.size()));
            if (n(m).needs_grad) {
                Tensor& gm = grad_buf(m);
                MapMat gm_m(gm.v.data(), gm.h, gm.w);
                Eigen::Map<const Eigen::Matrix<real_t, 1, Eigen::Dynamic>> v_row(
                    tv.v.data(), static_cast<Eigen::Index>(tv.size()));
                gm_m.noalias() += g_m * v_row;
            }
            if (n(v).needs_grad) {
                Tensor& gv = grad_buf(v);
                CMapMat m_m(tm.v.data(), tm.h, tm.w);
                Eigen::Map<Eigen::Matrix<real_t, Eigen::Dynamic, 1>> gv_m(
                    gv.v.data(), static_cast<Eigen::Index>(gv.size()));
                gv_m.noalias() += m_m.transpose() * g_m;
            }
        };
    return y;
}

Var Tape::row(Var m, int r) {
    const Tensor& tm = val(m);
    if (r < 0 || r >= tm.h) throw DimensionError("row: index out of range");
    Tensor out = Tensor::vec(tm.w);
    for (int j = 0; j < tm.w; ++j) out.v[static_cast<std::size_t>(j)] = tm.m(r, j);
    Var y = push(std::move(out), any_grad({m}));
    if (n(y).needs_grad)
        n(y).back = [this, m, y, r] {
            const Tensor& g = n(y).grad;
            Tensor& gm = grad_buf(m);
            for (int j = 0; j < gm.w; ++j) gm.m(r, j) += g.v[static_cast<std::size_t>(j)];
        };
    return y;
}

Var Tape::dot(Var a, Var b) {
    check_same_shape(val(a), val(b), "dot");
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i)
        s += static_cast<double>(ta.v[i]) * tb.v[i];
    Tensor out = Tensor::vec(1);
    out.v[0] = static_cast<real_t>(s);
    Var y = push(std::move(out), any_grad({a, b}));
    set_scalar(y, s);
    if (n(y).needs_grad)
        n(y).back = [this, a, b, y] {
            real_t g = n(y).grad.v[0];
            if (n(a).needs_grad) {
                Tensor& ga = grad_buf(a);
                const Tensor& vb = val(b);
                for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] += g * vb.v[i];
            }
            if (n(b).needs_grad) {
                Tensor& gb = grad_buf(b);
                const Tensor& va = val(a);
                for (std::size_t i = 0; i < gb.size(); ++i) gb.v[i] += g * va.v[i];
            }
        };
    return y;
}

Var Tape::l2_normalize(Var v) {
    const Tensor& tv = val(v);
    double s = 0.0;
    for (real_t x : tv.v) s += static_cast<double>(x) * x;
    real_t norm = static_cast<real_t>(std::sqrt(std::max(s, 1e-24)));
    Tensor out = tv;
    for (auto& x : out.v) x /= norm;
    Var y = push(std::move(out), any_grad({v}));
    if (n(y).needs_grad)
        n(y).back = [this, v, y, norm] {
            const Tensor& g = n(y).grad;
            const Tensor& vy = val(y);
            double gy = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i)
                gy += static_cast<double>(g.v[i]) * vy.v[i];
            Tensor& gv = grad_buf(v);
            for (std::size_t i = 0; i < g.size(); ++i)
                gv.v[i] += (g.v[i] - static_cast<real_t>(gy) * vy.v[i]) / norm;
        };
    return y;
}

// ---------------------------------------------------------------- normalization

Var Tape::instance_standardize(Var x, real_t eps) {
    const Tensor& tx = val(x);
    const int np = tx.pixels();
    std::vector<real_t> inv_std(static_cast<std::size_t>(tx.c));
    Tensor out(tx.h, tx.w, tx.c);
    for (int ci = 0; ci < tx.c; ++ci) {
        double mu = 0.0;
        for (int p = 0; p < np; ++p) mu += tx.v[static_cast<std::size_t>(p) * tx.c + ci];
        mu /= np;
        double var = 0.0;
        for (int p = 0; p < np; ++p) {
            double d = tx.v[static_cast<std::size_t>(p) * tx.c + ci] - mu;
            var += d * d;
        }
        var /= np;
        double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_std[static_cast<std::size_t>(ci)] = static_cast<real_t>(is);
        for (int p = 0; p < np; ++p)
            out.v[static_cast<std::size_t>(p) * tx.c + ci] = static_cast<real_t>(
                (tx.v[static_cast<std::size_t>(p) * tx.c + ci] - mu) * is);
    }
    Var y = push(std::move(out), any_grad({x}));
    if (n(y).needs_grad)
        n(y).back = [this, x, y, inv_std] {
            const Tensor& g = n(y).grad;
            const Tensor& vy = val(y);
            Tensor& gx = grad_buf(x);
            const int np = vy.pixels();
            for (int ci = 0; ci < vy.c; ++ci) {
                double gmean = 0.0, gymean = 0.0;
                for (int p = 0; p < np; ++p) {
                    std::size_t i = static_cast<std::size_t>(p) * vy.c + ci;
                    gmean += g.v[i];
                    gymean += static_cast<double>(g.v[i]) * vy.v[i];
                }
                gmean /= np;
                gymean /= np;
                real_t is = inv_std[static_cast<std::size_t>(ci)];
                for (int p = 0; p < np; ++p) {
                    std::size_t i = static_cast<std::size_t>(p) * vy.c + ci;
                    gx.v[i] += is * static_cast<real_t>(g.v[i] - gmean - vy.v[i] * gymean);
                }
            }
        };
    return y;
}

Var Tape::channel_affine(Var x, Var s, Var t) {
    const Tensor& tx = val(x);
    const Tensor& ts = val(s);
    const Tensor& tt = val(t);
    if (static_cast<int>(ts.size()) != tx.c || static_cast<int>(tt.size()) != tx.c)
        throw DimensionError("channel_affine: parameter length != channels");
    Tensor out(tx.h, tx.w, tx.c);
    for (int p = 0; p < tx.pixels(); ++p)
        for (int ci = 0; ci < tx.c; ++ci) {
            std::size_t i = static_cast<std::size_t>(p) * tx.c + ci;
            out.v[i] = ts.v[static_cast<std::size_t>(ci)] * tx.v[i] + tt.v[static_cast<std::size_t>(ci)];
        }
    Var y = push(std::move(out), any_grad({x, s, t}));
    if (n(y).needs_grad)
        n(y).back = [this, x, s, t, y] {
            const Tensor& g = n(y).grad;
            const Tensor& tx = val(x);
            const Tensor& ts = val(s);
            const int np = tx.pixels();
            if (n(x).needs_grad) {
                Tensor& gx = grad_buf(x);
                for (int p = 0; p < np; ++p)
                    for (int ci = 0; ci < tx.c; ++ci) {
                        std::size_t i = static_cast<std::size_t>(p) * tx.c + ci;
                        gx.v[i] += g.v[i] * ts.v[static_cast<std::size_t>(ci)];
                    }
            }
            if (n(s).needs_grad) {
                Tensor& gs = grad_buf(s);
                for (int ci = 0; ci < tx.c; ++ci) {
                    double acc = 0.0;
                    for (int p = 0; p < np; ++p) {
                        std::size_t i = static_cast<std::size_t>(p) * tx.c + ci;
                        acc += static_cast<double>(g.v[i]) * tx.v[i];
                    }
                    gs.v[static_cast<std::size_t>(ci)] += static_cast<real_t>(acc);
                }
            }
            if (n(t).needs_grad) {
                Tensor& gt = grad_buf(t);
                for (int ci = 0; ci < tx.c; ++ci) {
                    double acc = 0.0;
                    for (int p = 0; p < np; ++p)
                        acc += g.v[static_cast<std::size_t>(p) * tx.c + ci];
                    gt.v[static_cast<std::size_t>(ci)] += static_cast<real_t>(acc);
                }
            }
        };
    return y;
}

Var Tape::affine_map(Var x, Var s, Var t) {
    check_same_shape(val(x), val(s), "affine_map");
    check_same_shape(val(x), val(t), "affine_map");
    return add(mul(x, s), t);
}

// ---------------------------------------------------------------- reductions

Var Tape::mean_all(Var x) {
    const Tensor& tx = val(x);
    double s = 0.0;
    for (real_t v : tx.v) s += v;
    Tensor out = Tensor::vec(1);
    out.v[0] = static_cast<real_t>(s / static_cast<double>(tx.size()));
    Var y = push(std::move(out), any_grad({x}));
    set_scalar(y, s / static_cast<double>(tx.size()));
    if (n(y).needs_grad)
        n(y).back = [this, x, y] {
            real_t g = n(y).grad.v[0];
            Tensor& gx = grad_buf(x);
            real_t q = g / static_cast<real_t>(gx.size());
            for (auto& v : gx.v) v += q;
        };
    return y;
}

Var Tape::mean_abs_diff(Var a, Var b) {
    check_same_shape(val(a), val(b), "mean_abs_diff");
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) s += std::abs(static_cast<double>(ta.v[i]) - tb.v[i]);
    Tensor out = Tensor::vec(1);
    out.v[0] = static_cast<real_t>(s / static_cast<double>(ta.size()));
    Var y = push(std::move(out), any_grad({a, b}));
    set_scalar(y, s / static_cast<double>(ta.size()));
    if (n(y).needs_grad)
        n(y).back = [this, a, b, y] {
            real_t g = n(y).grad.v[0];
            const Tensor& ta = val(a);
            const Tensor& tb = val(b);
            real_t q = g / static_cast<real_t>(ta.size());
            for (std::size_t i = 0; i < ta.size(); ++i) {
                real_t d = ta.v[i] - tb.v[i];
                real_t sg = d > 0 ? q : (d < 0 ? -q : real_t(0));
                if (n(a).needs_grad) grad_buf(a).v[i] += sg;
                if (n(b).needs_grad) grad_buf(b).v[i] -= sg;
            }
        };
    return y;
}

Var Tape::mean_sq_diff(Var a, Var b) {
    check_same_shape(val(a), val(b), "mean_sq_diff");
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        double d = static_cast<double>(ta.v[i]) - tb.v[i];
        s += d * d;
    }
    Tensor out = Tensor::vec(1);
    out.v[0] = static_cast<real_t>(s / static_cast<double>(ta.size()));
    Var y = push(std::move(out), any_grad({a, b}));
    set_scalar(y, s / static_cast<double>(ta.size()));
    if (n(y).needs_grad)
        n(y).back = [this, a, b, y] {
            real_t g = n(y).grad.v[0];
            const Tensor& ta = val(a);
            const Tensor& tb = val(b);
            real_t q = real_t(2) * g / static_cast<real_t>(ta.size());
            for (std::size_t i = 0; i < ta.size(); ++i) {
                real_t d = (ta.v[i] - tb.v[i]) * q;
                if (n(a).needs_grad) grad_buf(a).v[i] += d;
                if (n(b).needs_grad) grad_buf(b).v[i] -= d;
            }
        };
    return y;
}

Var Tape::sq_norm_diff(Var a, Var b) {
    check_same_shape(val(a), val(b), "sq_norm_diff");
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        double d = static_cast<double>(ta.v[i]) - tb.v[i];
        s += d * d;
    }
    Tensor out = Tensor::vec(1);
    out.v[0] = static_cast<real_t>(s);
    Var y = push(std::move(out), any_grad({a, b}));
    set_scalar(y, s);
    if (n(y).needs_grad)
        n(y).back = [this, a, b, y] {
            real_t g = n(y).grad.v[0];
            const Tensor& ta = val(a);
            const Tensor& tb = val(b);
            for (std::size_t i = 0; i < ta.size(); ++i) {
                real_t d = real_t(2) * (ta.v[i] - tb.v[i]) * g;
                if (n(a).needs_grad) grad_buf(a).v[i] += d;
                if (n(b).needs_grad) grad_buf(b).v[i] -= d;
            }
        };
    return y;
}

Var Tape::softmax_ce(Var logits, int label) {
    const Tensor& tl = val(logits);
    const int nc = static_cast<int>(tl.size());
    if (label < 0 || label >= nc) throw ContractError("softmax_ce: label out of range");
    double m = tl.v[0];
    for (real_t v : tl.v) m = std::max(m, static_cast<double>(v));
    double lse = 0.0;
    for (real_t v : tl.v) lse += std::exp(static_cast<double>(v) - m);
    lse = std::log(lse);
    Tensor out = Tensor::vec(1);
    out.v[0] = static_cast<real_t>(lse - (static_cast<double>(tl.v[static_cast<std::size_t>(label)]) - m));
    Var y = push(std::move(out), any_grad({logits}));
    set_scalar(y, lse - (static_cast<double>(tl.v[static_cast<std::size_t>(label)]) - m));
    if (n(y).needs_grad)
        n(y).back = [this, logits, y, label, m, lse] {
            real_t g = n(y).grad.v[0];
            const Tensor& tl = val(logits);
            Tensor& gl = grad_buf(logits);
            for (std::size_t i = 0; i < tl.size(); ++i) {
                double p = std::exp(static_cast<double>(tl.v[i]) - m - lse);
                double onehot = (static_cast<int>(i) == label) ? 1.0 : 0.0;
                gl.v[i] += g * static_cast<real_t>(p - onehot);
            }
        };
    return y;
}

}  // namespace nlosim::nn
