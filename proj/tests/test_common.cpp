#include <doctest.h>

#include <atomic>
#include <set>

#include "nlosim/common.hpp"

using namespace nlosim;

TEST_CASE("rng is deterministic per seed") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        double va = a.uniform();
        CHECK(va == b.uniform());
        CHECK(va >= 0.0);
        CHECK(va < 1.0);
    }
    bool differs = false;
    Rng a2(42);
    for (int i = 0; i < 10; ++i) differs = differs || (a2.normal() != c.normal());
    CHECK(differs);
}

TEST_CASE("normal draws have sane moments") {
    Rng rng(7);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("derive_seed decorrelates indices") {
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) seen.insert(derive_seed(1, static_cast<std::uint64_t>(i)));
    CHECK(seen.size() == 1000);
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
}

TEST_CASE("fnv1a64 known value") {
    // FNV-1a 64 of empty input is the offset basis.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") != fnv1a64("b"));
    CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
}

TEST_CASE("deterministic_shuffle reproduces and permutes") {
    std::vector<int> a(100), b(100);
    for (int i = 0; i < 100; ++i) a[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)] = i;
    deterministic_shuffle(a, 5);
    deterministic_shuffle(b, 5);
    CHECK(a == b);
    std::set<int> elems(a.begin(), a.end());
    CHECK(elems.size() == 100);
    std::vector<int> c(100);
    for (int i = 0; i < 100; ++i) c[static_cast<std::size_t>(i)] = i;
    deterministic_shuffle(c, 6);
    CHECK(c != a);
}

TEST_CASE("parallel_chunks covers the range once with a fixed partition") {
    std::vector<std::atomic<int>> hits(257);
    for (auto& h : hits) h = 0;
    parallel_for(257, 4, [&](int i) { hits[static_cast<std::size_t>(i)]++; });
    for (auto& h : hits) CHECK(h == 1);

    // Partition depends only on (n, threads).
    std::vector<std::pair<int, int>> p1, p2;
    parallel_chunks(10, 3, [&](int, int b, int e) {
        static std::mutex m;
        std::lock_guard<std::mutex> lock(m);
        p1.emplace_back(b, e);
    });
    parallel_chunks(10, 3, [&](int, int b, int e) {
        static std::mutex m;
        std::lock_guard<std::mutex> lock(m);
        p2.emplace_back(b, e);
    });
    std::sort(p1.begin(), p1.end());
    std::sort(p2.begin(), p2.end());
    CHECK(p1 == p2);
}
