#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nlosim/codebook.hpp"
#include "nlosim/common.hpp"

using namespace nlosim;
using namespace nlosim::codebook;
using nn::GradBuffer;
using nn::ParamStore;
using nn::Tensor;

namespace {

LatentCondition unit_latent(std::initializer_list<float> values) {
    LatentCondition l;
    l.vector = Tensor::vec(static_cast<int>(values.size()));
    std::copy(values.begin(), values.end(), l.vector.v.begin());
    double n = 0;
    for (float v : l.vector.v) n += static_cast<double>(v) * v;
    n = std::sqrt(n);
    for (auto& v : l.vector.v) v = static_cast<float>(v / n);
    return l;
}

ParamStore two_code_store(Codebook& cb) {
    ParamStore store;
    cb.codes = store.add("codebook.codes", Tensor::matrix(2, 2));
    store.value(cb.codes).m(0, 0) = 1.0f;
    store.value(cb.codes).m(0, 1) = 0.0f;
    store.value(cb.codes).m(1, 0) = 0.0f;
    store.value(cb.codes).m(1, 1) = 1.0f;
    cb.n_c = 2;
    cb.n_d = 2;
    return store;
}

}  // namespace

TEST_CASE("test-time quantize picks the nearest code, ties to the lowest index") {
    Codebook cb;
    ParamStore store = two_code_store(cb);
    auto r = quantize(unit_latent({0.9f, 0.436f}), store, cb, QuantizeMode::test);
    CHECK(r.index == 0);
    CHECK(r.z_q.v[0] == 1.0f);
    CHECK(r.z_q.v[1] == 0.0f);

    // Exact tie: both rows equidistant -> index 0.
    auto tie = quantize(unit_latent({1.0f, 1.0f}), store, cb, QuantizeMode::test);
    CHECK(tie.index == 0);
}

TEST_CASE("train-time quantize returns the labeled row regardless of distance") {
    Codebook cb;
    ParamStore store = two_code_store(cb);
    // Latent exactly equals row 0, label says row 1.
    auto r = quantize(unit_latent({1.0f, 0.0f}), store, cb, QuantizeMode::train, 1);
    CHECK(r.index == 1);
    CHECK(r.z_q.v[1] == 1.0f);
    CHECK_THROWS_AS(quantize(unit_latent({1.0f, 0.0f}), store, cb, QuantizeMode::train),
                    ContractError);
    CHECK_THROWS_AS(quantize(unit_latent({1.0f, 0.0f}), store, cb, QuantizeMode::train, 7),
                    ContractError);
}

TEST_CASE("quantize matches a brute-force linear scan on 1000 seeded cases") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        int n_c = 2 + rng.uniform_int(14);
        int n_d = 2 + rng.uniform_int(30);
        ParamStore store;
        Codebook cb = Codebook::create(store, "codebook", n_c, n_d, rng.next_u64());
        LatentCondition l;
        l.vector = Tensor::vec(n_d);
        for (auto& v : l.vector.v) v = static_cast<float>(rng.normal());
        double n = 0;
        for (float v : l.vector.v) n += static_cast<double>(v) * v;
        n = std::sqrt(std::max(n, 1e-12));
        for (auto& v : l.vector.v) v = static_cast<float>(v / n);

        auto r = quantize(l, store, cb, QuantizeMode::test);

        const Tensor& codes = store.value(cb.codes);
        int best = -1;
        double best_d = 0;
        for (int i = 0; i < n_c; ++i) {
            double d = 0;
            for (int j = 0; j < n_d; ++j) {
                double diff = static_cast<double>(l.vector.v[static_cast<std::size_t>(j)]) - codes.m(i, j);
                d += diff * diff;
            }
            if (best < 0 || d < best_d) {
                best = i;
                best_d = d;
            }
        }
        REQUIRE(r.index == best);
    }
}

TEST_CASE("quantizer idempotence: re-quantizing a code returns its own index") {
    Rng rng(7);
    ParamStore store;
    Codebook cb = Codebook::create(store, "codebook", 8, 16, 99);
    for (int i = 0; i < 8; ++i) {
        LatentCondition l;
        l.vector = Tensor::vec(16);
        const Tensor& codes = store.value(cb.codes);
        for (int j = 0; j < 16; ++j) l.vector.v[static_cast<std::size_t>(j)] = codes.m(i, j);
        auto r = quantize(l, store, cb, QuantizeMode::test);
        CHECK(r.index == i);
    }
}

TEST_CASE("argmax invariance under common positive scaling before normalization") {
    Rng rng(15);
    ParamStore store;
    Codebook cb = Codebook::create(store, "codebook", 6, 8, 5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor raw = Tensor::vec(8);
        for (auto& v : raw.v) v = static_cast<float>(rng.normal());
        auto normalize = [](Tensor t) {
            double n = 0;
            for (float v : t.v) n += static_cast<double>(v) * v;
            n = std::sqrt(std::max(n, 1e-12));
            for (auto& v : t.v) v = static_cast<float>(v / n);
            return t;
        };
        Tensor scaled = raw;
        for (auto& v : scaled.v) v *= 37.5f;
        auto r1 = quantize(LatentCondition{normalize(raw)}, store, cb, QuantizeMode::test);
        auto r2 = quantize(LatentCondition{normalize(scaled)}, store, cb, QuantizeMode::test);
        CHECK(r1.index == r2.index);
    }
}

TEST_CASE("vq loss hand-computed InfoNCE case") {
    // Two codes, l.z0 = 1, l.z1 = 0, label 0, tau 1, alpha = beta = 0:
    // L = -log(e / (e + 1)).
    Codebook cb;
    ParamStore store = two_code_store(cb);
    LatentCondition l = unit_latent({1.0f, 0.0f});
    double v = vq_loss_value(store, l, cb, 0, 1.0, 0.0, 0.0);
    double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(v == doctest::Approx(expected).epsilon(1e-6));
    CHECK(expected == doctest::Approx(0.31326).epsilon(1e-4));
}

TEST_CASE("vq loss: matching latent zeroes both auxiliary terms") {
    Codebook cb;
    ParamStore store = two_code_store(cb);
    LatentCondition l = unit_latent({1.0f, 0.0f});
    nn::Tape t(&store);
    auto vars = vq_loss(t, t.input(l.vector), cb, 0, 0.07, 3.0, 5.0);
    CHECK(t.val(vars.codebook_term).v[0] == 0.0f);
    CHECK(t.val(vars.commit_term).v[0] == 0.0f);
}

TEST_CASE("alpha term ignores non-selected rows") {
    Codebook cb;
    ParamStore store = two_code_store(cb);
    LatentCondition l = unit_latent({0.6f, 0.8f});
    nn::Tape t1(&store);
    auto v1 = vq_loss(t1, t1.input(l.vector), cb, 0, 1.0, 2.0, 0.0);
    float before = t1.val(v1.codebook_term).v[0];
    // Perturb the non-selected row.
    store.value(cb.codes).m(1, 0) += 0.25f;
    nn::Tape t2(&store);
    auto v2 = vq_loss(t2, t2.input(l.vector), cb, 0, 1.0, 2.0, 0.0);
    CHECK(t2.val(v2.codebook_term).v[0] == before);
}

TEST_CASE("stop-gradient routing verified by finite differences") {
    // Stop-gradient defines the objective each leaf actually sees: the
    // sg'd argument is a frozen snapshot. The sensitivities below are
    // measured on that defining function -- frozen w.r.t. the sg'd leaf,
    // live (and matching the analytic tape gradient) w.r.t. the other.
    ParamStore store;
    Codebook cb = Codebook::create(store, "codebook", 4, 6, 77);
    Tensor lraw = testutil::random_tensor(1, 1, 6, 31);
    const int label = 2;
    const double h = 1e-3;

    const Tensor l_snapshot = lraw;                      // sg[l]
    Tensor row_snapshot = Tensor::vec(cb.n_d);           // sg[z_+]
    for (int j = 0; j < cb.n_d; ++j)
        row_snapshot.v[static_cast<std::size_t>(j)] = store.value(cb.codes).m(label, j);

    // term2(l, codes) = alpha * || sg[l] - z_label ||^2
    auto term2_value = [&]() {
        double s = 0;
        for (int j = 0; j < cb.n_d; ++j) {
            double d = static_cast<double>(l_snapshot.v[static_cast<std::size_t>(j)]) -
                       store.value(cb.codes).m(label, j);
            s += d * d;
        }
        return s;
    };
    // term3(l, codes) = beta * || sg[z_+] - l ||^2
    auto term3_value = [&]() {
        double s = 0;
        for (int j = 0; j < cb.n_d; ++j) {
            double d = static_cast<double>(row_snapshot.v[static_cast<std::size_t>(j)]) -
                       lraw.v[static_cast<std::size_t>(j)];
            s += d * d;
        }
        return s;
    };

    // --- term 2: FD w.r.t. l vanishes; analytic tape gradient agrees. ---
    {
        nn::Tape t(&store);
        nn::Var l = t.input(lraw, true);
        auto vars = vq_loss(t, l, cb, label, 0.5, 1.0, 0.0);
        t.backward(vars.codebook_term);
        if (t.has_grad(l))
            for (float g : t.grad(l).v) CHECK(g == 0.0f);
        for (std::size_t k = 0; k < lraw.v.size(); ++k) {
            float saved = lraw.v[k];
            lraw.v[k] = static_cast<float>(saved + h);
            double fp = term2_value();
            lraw.v[k] = static_cast<float>(saved - h);
            double fm = term2_value();
            lraw.v[k] = saved;
            CHECK(std::abs((fp - fm) / (2 * h)) <= 1e-6);
        }
        // The codebook path is live: FD w.r.t. the selected row matches.
        GradBuffer g(store);
        t.add_param_grads_to(g);
        Tensor& codes = store.value(cb.codes);
        for (int j = 0; j < cb.n_d; ++j) {
            float saved = codes.m(label, j);
            codes.m(label, j) = static_cast<float>(saved + h);
            double fp = term2_value();
            codes.m(label, j) = static_cast<float>(saved - h);
            double fm = term2_value();
            codes.m(label, j) = saved;
            double fd = (fp - fm) / (2 * h);
            CHECK(std::abs(fd - g.grad(cb.codes)[static_cast<std::size_t>(label * cb.n_d + j)]) <=
                  1e-3);
        }
    }

    // --- term 3: FD w.r.t. z_+ vanishes; analytic tape gradient agrees. ---
    {
        nn::Tape t(&store);
        nn::Var l = t.input(lraw, true);
        auto vars = vq_loss(t, l, cb, label, 0.5, 0.0, 1.0);
        t.backward(vars.commit_term);
        GradBuffer g(store);
        t.add_param_grads_to(g);
        for (float gv : g.grad(cb.codes)) CHECK(gv == 0.0f);
        Tensor& codes = store.value(cb.codes);
        for (int j = 0; j < cb.n_d; ++j) {
            float saved = codes.m(label, j);
            codes.m(label, j) = static_cast<float>(saved + h);
            double fp = term3_value();
            codes.m(label, j) = static_cast<float>(saved - h);
            double fm = term3_value();
            codes.m(label, j) = saved;
            CHECK(std::abs((fp - fm) / (2 * h)) <= 1e-6);
        }
        // The encoder path is live: FD w.r.t. l matches the analytic grad.
        for (std::size_t k = 0; k < lraw.v.size(); ++k) {
            float saved = lraw.v[k];
            lraw.v[k] = static_cast<float>(saved + h);
            double fp = term3_value();
            lraw.v[k] = static_cast<float>(saved - h);
            double fm = term3_value();
            lraw.v[k] = saved;
            double fd = (fp - fm) / (2 * h);
            CHECK(std::abs(fd - t.grad(l).v[k]) <= 1e-3);
        }
    }
}

TEST_CASE("InfoNCE bound: nonnegative, log(n_c) at uniform logits") {
    ParamStore store;
    // All rows identical: every logit equal regardless of l.
    Tensor codes = Tensor::matrix(5, 4);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) codes.m(i, j) = (j == 0) ? 1.0f : 0.0f;
    Codebook cb;
    cb.codes = store.add("codebook.codes", codes);
    cb.n_c = 5;
    cb.n_d = 4;
    LatentCondition l = unit_latent({0.5f, 0.5f, 0.5f, 0.5f});
    double v = vq_loss_value(store, l, cb, 3, 0.07, 0.0, 0.0);
    CHECK(v == doctest::Approx(std::log(5.0)).epsilon(1e-5));

    Rng rng(8);
    ParamStore store2;
    Codebook cb2 = Codebook::create(store2, "codebook", 7, 5, 3);
    for (int trial = 0; trial < 100; ++trial) {
        LatentCondition lr;
        lr.vector = Tensor::vec(5);
        for (auto& v2 : lr.vector.v) v2 = static_cast<float>(rng.normal());
        CHECK(vq_loss_value(store2, lr, cb2, rng.uniform_int(7), 0.07, 0.0, 0.0) >= 0.0);
    }
}

TEST_CASE("vq loss contract errors") {
    Codebook cb;
    ParamStore store = two_code_store(cb);
    LatentCondition l = unit_latent({1.0f, 0.0f});
    nn::Tape t(&store);
    CHECK_THROWS_AS(vq_loss(t, t.input(l.vector), cb, 5, 1.0, 1.0, 1.0), ContractError);
    CHECK_THROWS_AS(vq_loss(t, t.input(l.vector), cb, 0, 0.0, 1.0, 1.0), ContractError);
    Tensor badl = Tensor::vec(2);
    badl.v[0] = std::nanf("");
    CHECK_THROWS_AS(vq_loss(t, t.input(badl), cb, 0, 1.0, 1.0, 1.0), NumericError);
}

TEST_CASE("codebook rows are unit-norm at creation and after renormalize") {
    ParamStore store;
    Codebook cb = Codebook::create(store, "codebook", 10, 12, 13);
    auto check_rows = [&]() {
        const Tensor& codes = store.value(cb.codes);
        for (int i = 0; i < cb.n_c; ++i) {
            double n = 0;
            for (int j = 0; j < cb.n_d; ++j) n += static_cast<double>(codes.m(i, j)) * codes.m(i, j);
            CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
        }
    };
    check_rows();
    for (auto& v : store.value(cb.codes).v) v *= 3.7f;
    renormalize_rows(store, cb);
    check_rows();
}

TEST_CASE("condition encoder: unit norm output, determinism, dimension check") {
    ParamStore store;
    auto enc = CondEncoder::create(store, "ec", 16, 16, 1, 8, 24, 17);
    Tensor y = testutil::random_tensor(16, 16, 1, 55, 0.0, 1.0);
    LatentCondition l1 = enc.encode(store, y);
    LatentCondition l2 = enc.encode(store, y);
    CHECK(l1.dim() == 24);
    CHECK(l1.vector.v == l2.vector.v);
    double n = 0;
    for (float v : l1.vector.v) n += static_cast<double>(v) * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));

    Tensor bad = testutil::random_tensor(8, 8, 1, 56);
    CHECK_THROWS_AS(enc.encode(store, bad), DimensionError);
}
