#pragma once

#include <string>

#include "nlosim/common.hpp"
#include "nlosim/nn/tape.hpp"

namespace nlosim::nn {

/// Conv parameter pair registered under `<name>.w` / `<name>.b`.
/// Weight layout (k*k*cin, cout); He-normal init seeded from the base seed
/// mixed with the name hash, so construction order is irrelevant.
struct Conv {
    ParamId w{-1};
    ParamId b{-1};
    int k = 3;
    int stride = 1;
    int pad = 1;
    int cin = 0;
    int cout = 0;

    static Conv create(ParamStore& store, const std::string& name, int cin, int cout, int k,
                       int stride, int pad, std::uint64_t seed) {
        Conv c;
        c.k = k;
        c.stride = stride;
        c.pad = pad;
        c.cin = cin;
        c.cout = cout;
        c.w = store.add(name + ".w", he_normal(k * k * cin, cout, derive_seed(seed, fnv1a64(name), 1)));
        c.b = store.add(name + ".b", zeros_vec(cout));
        return c;
    }

    Var operator()(Tape& t, Var x) const { return t.conv2d(x, t.param(w), t.param(b), k, stride, pad); }
};

struct Linear {
    ParamId w{-1};
    ParamId b{-1};
    int in = 0;
    int out = 0;

    static Linear create(ParamStore& store, const std::string& name, int in, int out,
                         std::uint64_t seed) {
        Linear l;
        l.in = in;
        l.out = out;
        l.w = store.add(name + ".w", he_normal(in, out, derive_seed(seed, fnv1a64(name), 2)));
        l.b = store.add(name + ".b", zeros_vec(out));
        return l;
    }

    Var operator()(Tape& t, Var x) const { return t.linear(x, t.param(w), t.param(b)); }
};

constexpr real_t kLeakySlope = real_t(0.2);

}  // namespace nlosim::nn
