#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nlosim/common.hpp"
#include "nlosim/nn/layers.hpp"
#include "nlosim/nn/optim.hpp"
#include "nlosim/nn/tape.hpp"

using namespace nlosim;
using nn::GradBuffer;
using nn::ParamStore;
using nn::Tape;
using nn::Tensor;
using nn::Var;
using testutil::fd_check_params;
using testutil::random_tensor;

namespace {

constexpr double kTol = 1e-3;  // single-precision central-difference budget

/// Runs the aggregate FD check for a graph builder over all params in the
/// store plus one input tensor.
double check_graph(ParamStore& store, Tensor input,
                   const std::function<Var(Tape&, Var)>& build) {
    auto loss_value = [&]() {
        Tape t(&store, /*track=*/false);
        Var x = t.input(input);
        return static_cast<double>(t.val(build(t, x)).v[0]);
    };
    auto analytic = [&](GradBuffer& g) {
        Tape t(&store);
        Var x = t.input(input);
        Var loss = build(t, x);
        t.backward(loss);
        t.add_param_grads_to(g);
    };
    return fd_check_params(store, store.all_ids(), loss_value, analytic, 1e-2, 48);
}

}  // namespace

TEST_CASE("conv2d gradients (stride 1 and 2, with bias)") {
    for (int stride : {1, 2}) {
        ParamStore store;
        auto conv = nn::Conv::create(store, "c", 3, 4, 3, stride, 1, 11);
        Tensor x = random_tensor(8, 8, 3, 5);
        double err = check_graph(store, x, [&](Tape& t, Var in) {
            return t.mean_sq_diff(conv(t, in), t.input(random_tensor(8 / stride, 8 / stride, 4, 9)));
        });
        CHECK(err < kTol);
    }
}

TEST_CASE("conv2d input gradient") {
    ParamStore store;
    auto conv = nn::Conv::create(store, "c", 2, 3, 3, 1, 1, 3);
    Tensor x = random_tensor(6, 6, 2, 7);
    Tensor target = random_tensor(6, 6, 3, 8);

    auto loss_value = [&]() {
        Tape t(&store, false);
        return static_cast<double>(t.val(t.mean_sq_diff(conv(t, t.input(x)), t.input(target))).v[0]);
    };
    Tape t(&store);
    Var xin = t.input(x, /*needs_grad=*/true);
    Var loss = t.mean_sq_diff(conv(t, xin), t.input(target));
    t.backward(loss);
    double err = testutil::fd_check_input(x.v, t.grad(xin).v, loss_value);
    CHECK(err < kTol);
}

TEST_CASE("linear, matvec, row, dot, l2_normalize gradients") {
    ParamStore store;
    auto lin = nn::Linear::create(store, "l", 6, 5, 2);
    nn::ParamId mat = store.add("m", testutil::random_tensor(4, 5, 1, 3));
    Tensor x = random_tensor(1, 1, 6, 4);

    double err = check_graph(store, x, [&](Tape& t, Var in) {
        Var h = t.l2_normalize(lin(t, in));
        Var scores = t.matvec(t.param(mat), h);
        Var r = t.row(t.param(mat), 2);
        return t.add(t.softmax_ce(scores, 1), t.dot(r, h));
    });
    CHECK(err < kTol);
}

TEST_CASE("activation and structure op gradients") {
    ParamStore store;
    auto c1 = nn::Conv::create(store, "c1", 2, 4, 3, 1, 1, 21);
    auto c2 = nn::Conv::create(store, "c2", 8, 2, 3, 1, 1, 22);
    Tensor x = random_tensor(4, 4, 2, 23);
    Tensor target = random_tensor(6, 6, 2, 24);
    auto build = [&](Tape& t, Var in) {
        Var h = t.leaky_relu(c1(t, in), nn::real_t(0.2));
        Var up = t.upsample_nn2(h);          // 8x8x4
        Var down = t.avgpool2(up);           // 4x4x4
        Var cat = t.concat_c(down, h);       // 4x4x8
        Var s = t.sigmoid(c2(t, cat));       // 4x4x2
        Var resized = t.resize_nn(s, 6, 6);  // 6x6x2
        return t.mean_sq_diff(resized, t.input(target));
    };
    auto loss_value = [&]() {
        Tape t(&store, false);
        Var in = t.input(x);
        return static_cast<double>(t.val(build(t, in)).v[0]);
    };
    auto analytic = [&](GradBuffer& g) {
        Tape t(&store);
        Var in = t.input(x);
        t.backward(build(t, in));
        t.add_param_grads_to(g);
    };
    // Small step: large perturbations push preactivations across the
    // leaky-relu kink, which central differences cannot average away.
    double err = fd_check_params(store, store.all_ids(), loss_value, analytic, 4e-3, 48);
    CHECK(err < kTol);
}

TEST_CASE("instance standardize and channel affine gradients") {
    ParamStore store;
    nn::ParamId sp = store.add("s", random_tensor(1, 1, 3, 31, 0.5, 1.5));
    nn::ParamId tp = store.add("t", random_tensor(1, 1, 3, 32));
    auto c = nn::Conv::create(store, "c", 3, 3, 3, 1, 1, 33);
    Tensor x = random_tensor(5, 5, 3, 34);
    double err = check_graph(store, x, [&](Tape& t, Var in) {
        Var h = c(t, in);
        Var norm = t.instance_standardize(h, nn::real_t(1e-5));
        Var out = t.channel_affine(norm, t.param(sp), t.param(tp));
        return t.mean_sq_diff(out, t.input(random_tensor(5, 5, 3, 35)));
    });
    CHECK(err < kTol);
}

TEST_CASE("global avg pool, slice, flatten, mean ops gradients") {
    ParamStore store;
    auto c = nn::Conv::create(store, "c", 1, 6, 3, 1, 1, 41);
    Tensor x = random_tensor(4, 4, 1, 42);
    double err = check_graph(store, x, [&](Tape& t, Var in) {
        Var h = c(t, in);
        Var pooled = t.global_avg_pool(h);  // (1,1,6)
        Var a = t.slice_c(pooled, 0, 3);
        Var b = t.slice_c(pooled, 3, 3);
        Var l1 = t.mean_abs_diff(a, t.input(random_tensor(1, 1, 3, 43)));
        Var l2 = t.sq_norm_diff(b, t.input(random_tensor(1, 1, 3, 44)));
        Var flat = t.flatten(h);
        Var l3 = t.mean_all(t.mul(flat, flat));
        return t.add(t.add(l1, l2), l3);
    });
    CHECK(err < kTol);
}

TEST_CASE("stop_grad cuts the backward path") {
    ParamStore store;
    nn::ParamId p = store.add("p", random_tensor(1, 1, 4, 51));
    Tape t(&store);
    Var v = t.param(p);
    Var cut = t.stop_grad(v);
    Var loss = t.sq_norm_diff(cut, t.input(Tensor::vec(4)));
    t.backward(loss);
    GradBuffer g(store);
    t.add_param_grads_to(g);
    for (float gv : g.grad(p)) CHECK(gv == 0.0f);
}

TEST_CASE("softmax_ce value and gradient") {
    Tape t;
    Tensor logits = Tensor::vec(3);
    logits.v = {1.0f, 2.0f, 0.5f};
    Var lv = t.input(logits, true);
    Var loss = t.softmax_ce(lv, 1);
    double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5));
    CHECK(t.val(loss).v[0] == doctest::Approx(lse - 2.0).epsilon(1e-5));
    t.backward(loss);
    double p1 = std::exp(2.0 - lse);
    CHECK(t.grad(lv).v[1] == doctest::Approx(p1 - 1.0).epsilon(1e-5));
}

TEST_CASE("tape forward is deterministic") {
    ParamStore store;
    auto c = nn::Conv::create(store, "c", 2, 3, 3, 2, 1, 61);
    Tensor x = random_tensor(8, 8, 2, 62);
    Tape t1(&store, false), t2(&store, false);
    Var y1 = c(t1, t1.input(x));
    Var y2 = c(t2, t2.input(x));
    CHECK(t1.val(y1).v == t2.val(y2).v);
}

TEST_CASE("parallel batch gradients equal the serial reduction") {
    ParamStore store;
    auto c1 = nn::Conv::create(store, "c1", 1, 4, 3, 2, 1, 71);
    auto c2 = nn::Conv::create(store, "c2", 4, 1, 3, 1, 1, 72);
    const int bs = 7;
    std::vector<Tensor> xs, targets;
    for (int i = 0; i < bs; ++i) {
        xs.push_back(random_tensor(8, 8, 1, 100 + static_cast<std::uint64_t>(i)));
        targets.push_back(random_tensor(4, 4, 1, 200 + static_cast<std::uint64_t>(i)));
    }
    auto sample_grads = [&](int s, GradBuffer& g) {
        Tape t(&store);
        Var h = t.leaky_relu(c1(t, t.input(xs[static_cast<std::size_t>(s)])), nn::real_t(0.2));
        Var loss = t.mean_sq_diff(c2(t, h), t.input(targets[static_cast<std::size_t>(s)]));
        t.backward(loss, nn::real_t(1.0 / bs));
        t.add_param_grads_to(g);
    };

    GradBuffer serial(store);
    for (int s = 0; s < bs; ++s) sample_grads(s, serial);

    // Fixed-partition parallel accumulation reduced in chunk order.
    std::vector<std::unique_ptr<GradBuffer>> locals(3);
    parallel_chunks(bs, 3, [&](int chunk, int begin, int end) {
        locals[static_cast<std::size_t>(chunk)] = std::make_unique<GradBuffer>(store);
        for (int s = begin; s < end; ++s) sample_grads(s, *locals[static_cast<std::size_t>(chunk)]);
    });
    GradBuffer parallel(store);
    for (auto& l : locals) parallel.add(*l);

    for (auto id : store.all_ids()) {
        const auto& a = serial.grad(id);
        const auto& b = parallel.grad(id);
        for (std::size_t k = 0; k < a.size(); ++k)
            CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-6));
    }
}

TEST_CASE("cosine schedule endpoints and monotone decay") {
    CHECK(nn::cosine_lr(1e-4, 1e-8, 0, 100) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(nn::cosine_lr(1e-4, 1e-8, 100, 100) == doctest::Approx(1e-8).epsilon(1e-12));
    double mid = nn::cosine_lr(1e-4, 1e-8, 50, 100);
    CHECK(mid == doctest::Approx(1e-8 + 0.5 * (1e-4 - 1e-8)).epsilon(1e-12));
    double prev = 1e9;
    for (int s = 0; s <= 100; ++s) {
        double lr = nn::cosine_lr(1e-4, 1e-8, s, 100);
        CHECK(lr <= prev);
        prev = lr;
    }
}

TEST_CASE("adam reduces a quadratic and adamw decays weights") {
    ParamStore store;
    nn::ParamId p = store.add("p", random_tensor(1, 1, 8, 81));
    auto loss_of = [&]() {
        double s = 0;
        for (float v : store.value(p).v) s += static_cast<double>(v) * v;
        return s;
    };
    nn::Adam opt(store, {p}, nn::AdamSettings{});
    double initial = loss_of();
    for (int i = 0; i < 200; ++i) {
        GradBuffer g(store);
        auto& gp = g.grad(p);
        for (std::size_t k = 0; k < gp.size(); ++k) gp[k] = 2.0f * store.value(p).v[k];
        opt.step(g, 1e-2);
    }
    CHECK(loss_of() < 0.01 * initial);

    // Decoupled decay shrinks weights even at zero gradient.
    ParamStore store2;
    nn::ParamId q = store2.add("q", random_tensor(1, 1, 4, 82, 0.5, 1.0));
    nn::AdamSettings aw;
    aw.decoupled = true;
    aw.weight_decay = 0.1;
    nn::Adam opt2(store2, {q}, aw);
    double before = 0;
    for (float v : store2.value(q).v) before += std::abs(v);
    GradBuffer zero(store2);
    for (int i = 0; i < 10; ++i) opt2.step(zero, 1e-1);
    double after = 0;
    for (float v : store2.value(q).v) after += std::abs(v);
    CHECK(after < before);
}

TEST_CASE("adam state export/import round-trips") {
    ParamStore store;
    nn::ParamId p = store.add("p", random_tensor(1, 1, 4, 91));
    nn::Adam opt(store, {p}, nn::AdamSettings{});
    GradBuffer g(store);
    for (auto& v : g.grad(p)) v = 0.3f;
    opt.step(g, 1e-3);
    opt.step(g, 1e-3);
    auto state = opt.export_state();

    nn::Adam opt2(store, {p}, nn::AdamSettings{});
    opt2.import_state(state);
    CHECK(opt2.steps_taken() == 2);
    CHECK(opt2.export_state() == state);
}

TEST_CASE("gradient clipping caps the global norm") {
    ParamStore store;
    nn::ParamId p = store.add("p", Tensor::vec(3));
    GradBuffer g(store);
    g.grad(p) = {3.0f, 4.0f, 0.0f};
    double pre = nn::clip_global_norm(g, 1.0);
    CHECK(pre == doctest::Approx(5.0));
    CHECK(g.global_norm() == doctest::Approx(1.0).epsilon(1e-6));
    // Below the cap: untouched.
    g.grad(p) = {0.3f, 0.4f, 0.0f};
    nn::clip_global_norm(g, 1.0);
    CHECK(g.grad(p)[0] == doctest::Approx(0.3f));
}
