#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "nlosim/common.hpp"
#include "nlosim/dataset.hpp"
#include "nlosim/lightsim.hpp"
#include "nlosim/metrics.hpp"

using namespace nlosim;
using lightsim::build_transport_matrix;
using lightsim::classical_reconstruct;
using lightsim::condition_number;
using lightsim::render_projection;

namespace {

const Occluder kOccluder{4.3, -3.1, 28.0, 28.0, 33.0};

SceneGeometry desk_geometry(std::uint64_t seed = 7) {
    SceneGeometry g;
    g.geometry_seed = seed;
    return g;
}

ConditionSpec wall_cond(bool with_occluder, double d = 70.0) {
    return make_condition(0, d, AngleId::one, Illumination::ambient_dark, SurfaceKind::wall,
                          with_occluder ? std::optional<Occluder>(kOccluder) : std::nullopt);
}

// Regression fixtures recorded from the reference run of this implementation
// (seed-7 default desk geometry, full SVD / normal-equations solve).
constexpr double kKappaSeed7Occluded = 14591483.289;
constexpr double kTikhonovMeanPsnrDb = 23.7078;

}  // namespace

TEST_CASE("head-on single-pair entry reduces to albedo over distance squared") {
    // 3x3 grids with identical physical extents: the center pixel faces the
    // center patch head-on and sits on the camera axis, so both cosines and
    // the per-patch foreshortening are exactly 1, and r = D.
    SceneGeometry g;
    g.hidden_h = g.hidden_w = g.wall_h = g.wall_w = 3;
    g.hidden_size_h_cm = g.hidden_size_w_cm = 32.0;
    g.wall_size_h_cm = g.wall_size_w_cm = 32.0;
    g.geometry_seed = 5;
    ConditionSpec c = wall_cond(false);
    auto A = build_transport_matrix(c, g);
    auto rho = lightsim::per_patch_albedo(c, g);
    int center = 1 * 3 + 1;
    double expected =
        rho[static_cast<std::size_t>(center)] / (c.distance_cm * c.distance_cm) * A.normalizer;
    CHECK(A.entries(center, center) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("occluder visibility matches an independent segment-rectangle oracle") {
    SceneGeometry g = desk_geometry();
    ConditionSpec c = wall_cond(true);
    auto A = build_transport_matrix(c, g);
    const Occluder& o = *c.occluder;
    int blocked = 0;
    for (int i = 0; i < A.wall_pixels(); ++i)
        for (int j = 0; j < A.hidden_pixels(); ++j) {
            // Independent geometry: patch/pixel centers and the z=standoff crossing.
            int wr = i / g.wall_w, wc = i % g.wall_w;
            int hr = j / g.hidden_w, hc = j % g.hidden_w;
            double px = (wc + 0.5) / g.wall_w * g.wall_size_w_cm - 0.5 * g.wall_size_w_cm;
            double py = (wr + 0.5) / g.wall_h * g.wall_size_h_cm - 0.5 * g.wall_size_h_cm;
            double qx = (hc + 0.5) / g.hidden_w * g.hidden_size_w_cm - 0.5 * g.hidden_size_w_cm;
            double qy = (hr + 0.5) / g.hidden_h * g.hidden_size_h_cm - 0.5 * g.hidden_size_h_cm;
            double t = (c.distance_cm - o.standoff_cm) / c.distance_cm;
            double ix = qx + t * (px - qx);
            double iy = qy + t * (py - qy);
            bool expect_blocked = std::abs(ix - o.cx_cm) <= 0.5 * o.width_cm &&
                                  std::abs(iy - o.cy_cm) <= 0.5 * o.height_cm;
            if (expect_blocked) {
                ++blocked;
                REQUIRE(A.entries(i, j) == 0.0);
            } else {
                REQUIRE(A.entries(i, j) > 0.0);
            }
        }
    CHECK(blocked > 1000);  // the desk occluder shadows a large fraction
}

TEST_CASE("nonnegativity and determinism of the builder") {
    SceneGeometry g = desk_geometry();
    for (bool occ : {false, true}) {
        ConditionSpec c = wall_cond(occ);
        auto A1 = build_transport_matrix(c, g);
        auto A2 = build_transport_matrix(c, g);
        CHECK(A1.entries.minCoeff() >= 0.0);
        CHECK(A1.entries == A2.entries);  // bit-identical
        CHECK(A1.normalizer == A2.normalizer);
    }
    // Whiteboard exercises the specular path.
    auto c = make_condition(0, 70.0, AngleId::two, Illumination::daylight, SurfaceKind::whiteboard,
                            kOccluder);
    auto A = build_transport_matrix(c, desk_geometry());
    CHECK(A.entries.minCoeff() >= 0.0);
    CHECK(A.entries.maxCoeff() > 0.0);
}

TEST_CASE("builder rejects degenerate inputs") {
    SceneGeometry g = desk_geometry();
    ConditionSpec c = wall_cond(false);
    c.distance_cm = 0.0;  // planes coincide
    CHECK_THROWS_AS(build_transport_matrix(c, g), ConfigError);

    ConditionSpec zc = wall_cond(true);
    zc.occluder->width_cm = 0.0;
    CHECK_THROWS_AS(build_transport_matrix(zc, g), ConfigError);

    ConditionSpec oc = wall_cond(true);
    oc.occluder->standoff_cm = 100.0;  // behind the hidden plane
    CHECK_THROWS_AS(build_transport_matrix(oc, g), ConfigError);
}

TEST_CASE("condition number trivials") {
    CHECK(condition_number(Eigen::MatrixXd::Identity(8, 8)) == doctest::Approx(1.0));
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
    d(0, 0) = 1.0;
    d(1, 1) = 2.0;
    CHECK(condition_number(d) == doctest::Approx(2.0));
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(2, 2);
    z(0, 0) = 1.0;
    CHECK(std::isinf(condition_number(z)));
    Eigen::MatrixXd bad = Eigen::MatrixXd::Constant(2, 2, std::nan(""));
    CHECK_THROWS_AS(condition_number(bad), NumericError);
}

TEST_CASE("occluder lowers the condition number on three seeded geometries") {
    for (std::uint64_t seed : {7ULL, 19ULL, 101ULL}) {
        SceneGeometry g = desk_geometry(seed);
        double k_occ = condition_number(build_transport_matrix(wall_cond(true), g));
        double k_no = condition_number(build_transport_matrix(wall_cond(false), g));
        CHECK(k_occ < k_no);
        CHECK(std::isfinite(k_occ));
    }
}

TEST_CASE("seed-7 condition number regression fixture") {
    auto A = build_transport_matrix(wall_cond(true), desk_geometry(7));
    double k = condition_number(A);
    CHECK(k == doctest::Approx(kKappaSeed7Occluded).epsilon(1e-3));
}

TEST_CASE("render: zero image with zero floor and noise renders to zero") {
    ConditionSpec c = wall_cond(true);
    c.ambient_floor = 0.0;
    c.noise_sigma = 0.0;
    auto A = build_transport_matrix(c, desk_geometry());
    ImageGrid x(16, 16, 1);
    ImageGrid y = render_projection(A, x, 1);
    for (double v : y.v) CHECK(v == 0.0);
}

TEST_CASE("render: unit pixel reproduces a transport column") {
    ConditionSpec c = wall_cond(true);
    c.ambient_floor = 0.0;
    c.noise_sigma = 0.0;
    auto A = build_transport_matrix(c, desk_geometry());
    int j = 5 * 16 + 9;
    ImageGrid x(16, 16, 1);
    x.v[static_cast<std::size_t>(j)] = 1.0;
    ImageGrid y = render_projection(A, x, 1);
    for (int i = 0; i < A.wall_pixels(); ++i)
        CHECK(y.v[static_cast<std::size_t>(i)] == doctest::Approx(A.entries(i, j)).epsilon(1e-12));
}

TEST_CASE("render matches the naive triple-loop oracle to 1e-12") {
    SceneGeometry g;
    g.hidden_h = g.hidden_w = 8;
    g.wall_h = g.wall_w = 8;
    g.geometry_seed = 3;
    ConditionSpec c = make_condition(0, 70.0, AngleId::two, Illumination::daylight,
                                     SurfaceKind::whiteboard, kOccluder);
    c.noise_sigma = 0.0;  // oracle covers the linear + floor + clip part
    auto A = build_transport_matrix(c, g);
    ImageGrid x = dataset::procedural_hidden(8, 8, 3, 99);
    ImageGrid y = render_projection(A, x, 42);

    for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < A.wall_pixels(); ++i) {
            double acc = 0.0;
            for (int j = 0; j < A.hidden_pixels(); ++j)
                acc += A.entries(i, j) * x.v[static_cast<std::size_t>(j) * 3 + ch];
            acc += c.ambient_floor;
            acc = std::min(1.0, std::max(0.0, acc));
            REQUIRE(y.v[static_cast<std::size_t>(i) * 3 + ch] ==
                    doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("render noise is deterministic per seed and seed-sensitive") {
    auto A = build_transport_matrix(wall_cond(true), desk_geometry());
    ImageGrid x = dataset::procedural_hidden(16, 16, 1, 4);
    ImageGrid y1 = render_projection(A, x, 10);
    ImageGrid y2 = render_projection(A, x, 10);
    ImageGrid y3 = render_projection(A, x, 11);
    CHECK(y1.v == y2.v);
    CHECK(y1.v != y3.v);
}

TEST_CASE("render rejects shape mismatch") {
    auto A = build_transport_matrix(wall_cond(true), desk_geometry());
    ImageGrid x(8, 8, 1);
    CHECK_THROWS_AS(render_projection(A, x, 0), DimensionError);
}

TEST_CASE("superposition holds without floor, noise or clipping") {
    ConditionSpec c = wall_cond(true);
    c.ambient_floor = 0.0;
    c.noise_sigma = 0.0;
    auto A = build_transport_matrix(c, desk_geometry());
    ImageGrid x1 = dataset::procedural_hidden(16, 16, 1, 21);
    ImageGrid x2 = dataset::procedural_hidden(16, 16, 1, 22);
    for (auto& v : x1.v) v *= 0.4;
    for (auto& v : x2.v) v *= 0.4;
    ImageGrid xs = x1;
    for (std::size_t i = 0; i < xs.v.size(); ++i) xs.v[i] += x2.v[i];
    ImageGrid ys = render_projection(A, xs, 0);
    ImageGrid y1 = render_projection(A, x1, 0);
    ImageGrid y2 = render_projection(A, x2, 0);
    for (std::size_t i = 0; i < ys.v.size(); ++i)
        REQUIRE(ys.v[i] == doctest::Approx(y1.v[i] + y2.v[i]).epsilon(1e-10));
}

TEST_CASE("classical reconstruction trivials") {
    auto A = build_transport_matrix(wall_cond(true), desk_geometry());
    ImageGrid zero(16, 16, 1);
    for (double reg : {0.0, 1e-6, 1.0}) {
        ImageGrid x = classical_reconstruct(A, zero, reg);
        for (double v : x.v) CHECK(v == 0.0);
    }
    // Huge regularizer shrinks the solution to nothing.
    ImageGrid y = render_projection(A, dataset::procedural_hidden(16, 16, 1, 2), 0);
    ImageGrid x = classical_reconstruct(A, y, 1e12);
    double norm = 0.0;
    for (double v : x.v) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("classical reconstruction with reg 0 on a singular system raises") {
    // Without the occluder the transport is numerically rank-deficient.
    auto A = build_transport_matrix(wall_cond(false), desk_geometry());
    ImageGrid y = render_projection(A, dataset::procedural_hidden(16, 16, 1, 2), 0);
    CHECK_THROWS_AS(classical_reconstruct(A, y, 0.0), IllConditionedError);
}

TEST_CASE("noiseless Tikhonov PSNR regression fixture") {
    ConditionSpec c = wall_cond(true);
    c.noise_sigma = 0.0;
    c.ambient_floor = 0.0;
    auto A = build_transport_matrix(c, desk_geometry(7));
    double mean = 0.0;
    for (int i = 0; i < 5; ++i) {
        ImageGrid x = dataset::procedural_hidden(16, 16, 1, 1000 + i);
        ImageGrid y = render_projection(A, x, 0);
        ImageGrid xr = classical_reconstruct(A, y, 1e-8);
        mean += metrics::psnr(xr, x);
    }
    mean /= 5.0;
    CHECK(mean >= kTikhonovMeanPsnrDb - 0.1);
}

TEST_CASE("transport serialization round-trips bit-exactly") {
    testutil::TempDir tmp("nltm");
    SceneGeometry g = desk_geometry();
    ConditionSpec c = make_condition(3, 100.0, AngleId::two, Illumination::daylight,
                                     SurfaceKind::whiteboard, kOccluder);
    auto A = build_transport_matrix(c, g);
    lightsim::save_transport(tmp.path / "a.nltm", A);
    auto B = lightsim::load_transport(tmp.path / "a.nltm");
    CHECK(B.entries == A.entries);
    CHECK(B.normalizer == A.normalizer);
    CHECK(B.cond == A.cond);
    CHECK(B.geom == A.geom);

    // Magic check.
    std::ofstream bad(tmp.path / "bad.nltm", std::ios::binary);
    bad << "XXXXX";
    bad.close();
    CHECK_THROWS_AS(lightsim::load_transport(tmp.path / "bad.nltm"), Error);
}

TEST_CASE("transport cache builds once and reloads identically") {
    testutil::TempDir tmp("cache");
    SceneGeometry g = desk_geometry();
    ConditionSpec c = make_condition(2, 70.0, AngleId::one, Illumination::ambient_dark,
                                     SurfaceKind::wall, kOccluder);
    auto p = lightsim::transport_cache_path(tmp.path, c, g);
    CHECK(!std::filesystem::exists(p));
    auto A1 = lightsim::cached_transport(tmp.path, c, g);
    CHECK(std::filesystem::exists(p));
    auto A2 = lightsim::cached_transport(tmp.path, c, g);
    CHECK(A1.entries == A2.entries);
    CHECK(A2.cond.id == 2);  // label restored on cache hit

    // Physically identical conditions share a cache entry regardless of id.
    ConditionSpec c9 = c;
    c9.id = 9;
    CHECK(lightsim::transport_cache_path(tmp.path, c9, g) == p);
}
