#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nlosim/common.hpp"
#include "nlosim/modulation.hpp"

using namespace nlosim;
using namespace nlosim::modulation;
using nn::ParamStore;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

/// Per-channel mean/std of a tensor (population std).
std::pair<std::vector<double>, std::vector<double>> channel_moments(const Tensor& t) {
    std::vector<double> mean(static_cast<std::size_t>(t.c), 0.0), stddev(static_cast<std::size_t>(t.c), 0.0);
    int np = t.pixels();
    for (int c = 0; c < t.c; ++c) {
        double mu = 0;
        for (int p = 0; p < np; ++p) mu += t.v[static_cast<std::size_t>(p) * t.c + c];
        mu /= np;
        double var = 0;
        for (int p = 0; p < np; ++p) {
            double d = t.v[static_cast<std::size_t>(p) * t.c + c] - mu;
            var += d * d;
        }
        mean[static_cast<std::size_t>(c)] = mu;
        stddev[static_cast<std::size_t>(c)] = std::sqrt(var / np);
    }
    return {mean, stddev};
}

}  // namespace

TEST_CASE("moment property: modulated channels carry (t_b, |t_s|) statistics") {
    Rng rng(1);
    ParamStore store;
    LtmBlock block = LtmBlock::create(store, "ltm", 6, 5, 3);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor f = testutil::random_tensor(8, 8, 5, 1000 + static_cast<std::uint64_t>(trial), -2.0, 2.0);
        Tensor o = testutil::random_tensor(4, 4, 6, 2000 + static_cast<std::uint64_t>(trial));
        Tape t(&store, false);
        Var fv = t.input(f);
        Var ov = t.input(o);
        auto [ts, tb] = block.derive_params(t, ov, 8, 8);
        Var out = block.modulate(t, fv, ov);
        auto [mean, stddev] = channel_moments(t.val(out));
        for (int c = 0; c < 5; ++c) {
            REQUIRE(std::abs(mean[static_cast<std::size_t>(c)] -
                             t.val(tb).v[static_cast<std::size_t>(c)]) <= 1e-3);
            REQUIRE(std::abs(stddev[static_cast<std::size_t>(c)] -
                             std::abs(t.val(ts).v[static_cast<std::size_t>(c)])) <= 1e-3);
        }
    }
}

TEST_CASE("identity parameters reproduce the standardized input") {
    // Zero the parameter conv and set its bias so t_s = 1, t_b = 0.
    ParamStore store;
    LtmBlock block = LtmBlock::create(store, "ltm", 4, 3, 9);
    store.value(block.to_params.w).fill(0.0f);
    Tensor& bias = store.value(block.to_params.b);
    for (int c = 0; c < 3; ++c) {
        bias.v[static_cast<std::size_t>(c)] = 1.0f;      // t_s
        bias.v[static_cast<std::size_t>(3 + c)] = 0.0f;  // t_b
    }
    Tensor f = testutil::random_tensor(6, 6, 3, 5, -1.0, 3.0);
    Tensor o = testutil::random_tensor(2, 2, 4, 6);
    Tape t(&store, false);
    Var out = block.modulate(t, t.input(f), t.input(o));
    Var standardized = t.instance_standardize(t.input(f), kLtmEps);
    for (std::size_t i = 0; i < t.val(out).size(); ++i)
        REQUIRE(std::abs(t.val(out).v[i] - t.val(standardized).v[i]) <= 1e-4);

    // Pre-standardized input (mean 0, std 1 per channel) stays put within
    // the epsilon-induced tolerance.
    Tensor z = t.val(standardized);
    Tape t2(&store, false);
    Var out2 = block.modulate(t2, t2.input(z), t2.input(o));
    for (std::size_t i = 0; i < z.size(); ++i)
        REQUIRE(std::abs(t2.val(out2).v[i] - z.v[i]) <= 1e-4);
}

TEST_CASE("zero scaling collapses each channel to its translation") {
    ParamStore store;
    LtmBlock block = LtmBlock::create(store, "ltm", 4, 2, 9);
    store.value(block.to_params.w).fill(0.0f);
    Tensor& bias = store.value(block.to_params.b);
    bias.v[0] = 0.0f;   // t_s[0]
    bias.v[1] = 0.0f;   // t_s[1]
    bias.v[2] = 0.7f;   // t_b[0]
    bias.v[3] = -0.2f;  // t_b[1]
    Tensor f = testutil::random_tensor(5, 5, 2, 8);
    Tensor o = testutil::random_tensor(2, 2, 4, 9);
    Tape t(&store, false);
    Var out = block.modulate(t, t.input(f), t.input(o));
    for (int p = 0; p < 25; ++p) {
        CHECK(t.val(out).v[static_cast<std::size_t>(p) * 2] == doctest::Approx(0.7).epsilon(1e-5));
        CHECK(t.val(out).v[static_cast<std::size_t>(p) * 2 + 1] == doctest::Approx(-0.2).epsilon(1e-5));
    }
}

TEST_CASE("modulate rejects mismatched channel counts") {
    ParamStore store;
    LtmBlock block = LtmBlock::create(store, "ltm", 4, 3, 9);
    Tape t(&store, false);
    Var f = t.input(testutil::random_tensor(4, 4, 5, 1));
    Var o = t.input(testutil::random_tensor(2, 2, 4, 2));
    CHECK_THROWS_AS(block.modulate(t, f, o), DimensionError);
}

TEST_CASE("inject doubles channels and keeps the original in the second half") {
    ParamStore store;
    LtmBlock block = LtmBlock::create(store, "ltm", 4, 3, 11);
    Tensor f = testutil::random_tensor(4, 4, 3, 21);
    Tensor o = testutil::random_tensor(2, 2, 4, 22);
    Tape t(&store, false);
    Var fv = t.input(f);
    Var out = block.inject(t, fv, t.input(o));
    const Tensor& v = t.val(out);
    REQUIRE(v.c == 6);
    REQUIRE(v.h == 4);
    for (int p = 0; p < 16; ++p)
        for (int c = 0; c < 3; ++c)
            REQUIRE(v.v[static_cast<std::size_t>(p) * 6 + 3 + c] ==
                    f.v[static_cast<std::size_t>(p) * 3 + c]);
}

TEST_CASE("inject with identity params puts the standardized input first") {
    ParamStore store;
    LtmBlock block = LtmBlock::create(store, "ltm", 4, 3, 12);
    store.value(block.to_params.w).fill(0.0f);
    Tensor& bias = store.value(block.to_params.b);
    for (int c = 0; c < 3; ++c) {
        bias.v[static_cast<std::size_t>(c)] = 1.0f;
        bias.v[static_cast<std::size_t>(3 + c)] = 0.0f;
    }
    Tensor f = testutil::random_tensor(4, 4, 3, 31, -1.0, 2.0);
    Tensor o = testutil::random_tensor(2, 2, 4, 32);
    Tape t(&store, false);
    Var out = block.inject(t, t.input(f), t.input(o));
    Var standardized = t.instance_standardize(t.input(f), kLtmEps);
    for (int p = 0; p < 16; ++p)
        for (int c = 0; c < 3; ++c)
            REQUIRE(std::abs(t.val(out).v[static_cast<std::size_t>(p) * 6 + c] -
                             t.val(standardized).v[static_cast<std::size_t>(p) * 3 + c]) <= 1e-5);
}

TEST_CASE("upsample_rep doubles the spatial size and increments scale") {
    ParamStore store;
    UpsampleRep up = UpsampleRep::create(store, "up", 4, 13);
    Tape t(&store, false);
    ScaleRep prev{t.input(testutil::random_tensor(4, 4, 4, 41)), 2};
    ScaleRep next = up(t, prev);
    CHECK(next.scale_index == 3);
    CHECK(t.val(next.map).h == 8);
    CHECK(t.val(next.map).w == 8);
    CHECK(t.val(next.map).c == 4);
}

TEST_CASE("identity-initialized upsample conv keeps a constant map constant") {
    ParamStore store;
    UpsampleRep up = UpsampleRep::create(store, "up", 3, 14);
    // 3x3 identity kernel: center tap 1 on the matching channel.
    Tensor& w = store.value(up.conv.w);
    w.fill(0.0f);
    for (int c = 0; c < 3; ++c) w.m(4 * 3 + c, c) = 1.0f;  // center tap (ky=1,kx=1)
    store.value(up.conv.b).fill(0.0f);

    Tensor constant(2, 2, 3);
    for (auto& v : constant.v) v = 0.42f;
    Tape t(&store, false);
    ScaleRep prev{t.input(constant), 0};
    ScaleRep next = up(t, prev);
    // Interior equals the constant; zero padding shaves the borders, so
    // check the center pixels.
    const Tensor& m = t.val(next.map);
    for (int y = 1; y < 3; ++y)
        for (int x = 1; x < 3; ++x)
            for (int c = 0; c < 3; ++c)
                REQUIRE(m.at(y, x, c) == doctest::Approx(0.42).epsilon(1e-6));
}

TEST_CASE("scale chain: k upsamples from 1x1 reach 2^k") {
    ParamStore store;
    std::vector<SiteSpec> sites{{0, 2}, {1, 4}, {2, 8}, {3, 16}};
    ModulationChain chain = ModulationChain::create(store, "chain", 10, 6, 4, sites, 15);
    Tape t(&store, false);
    Var z = t.input(testutil::random_tensor(1, 1, 10, 51));
    auto reps = chain.scale_reps(t, z);
    REQUIRE(reps.size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(t.val(reps[static_cast<std::size_t>(i)].map).h == (1 << i));
        CHECK(t.val(reps[static_cast<std::size_t>(i)].map).w == (1 << i));
        CHECK(reps[static_cast<std::size_t>(i)].scale_index == i);
    }
    CHECK(chain.block_for(2) != nullptr);
    CHECK(chain.block_for(2)->feature_channels == 8);

    // Sparse sites (single-scale ablation shape).
    ParamStore store2;
    ModulationChain sparse = ModulationChain::create(store2, "chain", 10, 6, 4, {{3, 16}}, 16);
    CHECK(sparse.block_for(0) == nullptr);
    CHECK(sparse.block_for(3) != nullptr);
}

TEST_CASE("gradients flow through modulate, inject and the upsample chain") {
    ParamStore store;
    std::vector<SiteSpec> sites{{0, 3}, {1, 3}};
    ModulationChain chain = ModulationChain::create(store, "chain", 6, 4, 2, sites, 17);
    Tensor f0 = testutil::random_tensor(1, 1, 3, 61);
    Tensor f1 = testutil::random_tensor(2, 2, 3, 62);
    Tensor z = testutil::random_tensor(1, 1, 6, 63);
    Tensor target0 = testutil::random_tensor(1, 1, 6, 64);
    Tensor target1 = testutil::random_tensor(2, 2, 3, 65);

    auto build = [&](Tape& t) {
        Var zv = t.input(z);
        auto reps = chain.scale_reps(t, zv);
        Var i0 = chain.blocks[0].inject(t, t.input(f0), reps[0].map);
        Var m1 = chain.blocks[1].modulate(t, t.input(f1), reps[1].map);
        return t.add(t.mean_sq_diff(i0, t.input(target0)), t.mean_sq_diff(m1, t.input(target1)));
    };
    auto loss_value = [&]() {
        Tape t(&store, false);
        return static_cast<double>(t.val(build(t)).v[0]);
    };
    auto analytic = [&](nn::GradBuffer& g) {
        Tape t(&store);
        Var loss = build(t);
        t.backward(loss);
        t.add_param_grads_to(g);
    };
    double err = testutil::fd_check_params(store, store.all_ids(), loss_value, analytic, 1e-2, 48);
    CHECK(err < 1e-3);
}

TEST_CASE("spatial variant produces full-resolution parameter maps") {
    ParamStore store;
    LtmBlock block = LtmBlock::create(store, "ltm", 4, 3, 18, /*spatial=*/true);
    Tensor f = testutil::random_tensor(8, 8, 3, 71);
    Tensor o = testutil::random_tensor(2, 2, 4, 72);
    Tape t(&store, false);
    Var out = block.modulate(t, t.input(f), t.input(o));
    CHECK(t.val(out).h == 8);
    CHECK(t.val(out).c == 3);
    auto [ts, tb] = block.derive_params(t, t.input(o), 8, 8);
    CHECK(t.val(ts).h == 8);
    CHECK(t.val(ts).w == 8);
    CHECK(t.val(tb).c == 3);
}
