#include "nlosim/lightsim.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "nlosim/common.hpp"

namespace nlosim::lightsim {

namespace {

constexpr double kSpecularExponent = 50.0;

struct Vec3 {
    double x, y, z;
};

Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 scaled(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }

/// Scene frame: relay wall in the z=0 plane with normal +z; the hidden image
/// plane at z=D facing it. The camera sits on the hidden side at 1.5*D from
/// the wall center, tilted by 0 deg (angle 1) or 30 deg (angle 2) in the
/// x-z plane.
Vec3 camera_position(const ConditionSpec& cond) {
    double dist = 1.5 * cond.distance_cm;
    double tilt = (cond.angle == AngleId::one) ? 0.0 : 30.0 * M_PI / 180.0;
    return {dist * std::sin(tilt), 0.0, dist * std::cos(tilt)};
}

/// Patch/pixel centers laid out row-major: grid index (r,c) maps to
/// x = (c + 0.5)/n_w * size_w - size_w/2, y likewise with rows.
Vec3 grid_point(int r, int c, int nh, int nw, double size_h, double size_w, double z) {
    double x = (c + 0.5) / nw * size_w - 0.5 * size_w;
    double y = (r + 0.5) / nh * size_h - 0.5 * size_h;
    (void)nh;
    return {x, y, z};
}

bool segment_blocked(const Vec3& from_hidden, const Vec3& to_wall, const Occluder& occ) {
    // Both endpoints have distinct z; the occluder plane sits at z=standoff.
    double dz = to_wall.z - from_hidden.z;
    double t = (occ.standoff_cm - from_hidden.z) / dz;
    if (t <= 0.0 || t >= 1.0) return false;
    double x = from_hidden.x + t * (to_wall.x - from_hidden.x);
    double y = from_hidden.y + t * (to_wall.y - from_hidden.y);
    return std::abs(x - occ.cx_cm) <= 0.5 * occ.width_cm &&
           std::abs(y - occ.cy_cm) <= 0.5 * occ.height_cm;
}

void write_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::istream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw IoError("transport file truncated");
}

}  // namespace

std::vector<double> per_patch_albedo(const ConditionSpec& cond, const SceneGeometry& geom) {
    int n = geom.wall_h * geom.wall_w;
    std::vector<double> rho(static_cast<std::size_t>(n), cond.albedo);
    if (cond.surface == SurfaceKind::wall) {
        Rng rng(derive_seed(geom.geometry_seed, 0x77a11u));
        for (auto& r : rho) r *= 1.0 + 0.1 * (2.0 * rng.uniform() - 1.0);
    }
    return rho;
}

TransportMatrix build_transport_matrix(const ConditionSpec& cond, const SceneGeometry& geom) {
    cond.validate();
    geom.validate();
    if (!(cond.distance_cm > 0.0))
        throw ConfigError("build_transport_matrix: hidden and wall planes intersect");

    const int rows = geom.wall_h * geom.wall_w;
    const int cols = geom.hidden_h * geom.hidden_w;
    const double d = cond.distance_cm;
    const double s = cond.specular_mix;
    const Vec3 cam = camera_position(cond);
    const Vec3 wall_normal{0.0, 0.0, 1.0};
    const std::vector<double> rho = per_patch_albedo(cond, geom);

    Eigen::MatrixXd a(rows, cols);
    for (int i = 0; i < rows; ++i) {
        int wr = i / geom.wall_w;
        int wc = i % geom.wall_w;
        Vec3 p = grid_point(wr, wc, geom.wall_h, geom.wall_w, geom.wall_size_h_cm,
                            geom.wall_size_w_cm, 0.0);
        Vec3 to_cam = cam - p;
        double cam_dist = norm(to_cam);
        Vec3 view = scaled(to_cam, 1.0 / cam_dist);
        double foreshorten = std::max(0.0, dot(view, wall_normal));

        for (int j = 0; j < cols; ++j) {
            int hr = j / geom.hidden_w;
            int hc = j % geom.hidden_w;
            Vec3 q = grid_point(hr, hc, geom.hidden_h, geom.hidden_w, geom.hidden_size_h_cm,
                                geom.hidden_size_w_cm, d);
            if (cond.occluder && segment_blocked(q, p, *cond.occluder)) {
                a(i, j) = 0.0;
                continue;
            }
            Vec3 seg = p - q;  // hidden pixel -> wall patch
            double r = norm(seg);
            // Emission against the hidden plane normal (0,0,-1) and
            // incidence against the wall normal (0,0,+1) both reduce to d/r.
            double cos_e = d / r;
            double cos_i = d / r;
            double diffuse = (1.0 - s) * cos_e * cos_i / (r * r);
            double spec = 0.0;
            if (s > 0.0) {
                Vec3 in_dir = scaled(seg, 1.0 / r);
                // Mirror of the incident direction about the wall normal.
                Vec3 refl{-in_dir.x, -in_dir.y, in_dir.z};
                spec = s * std::pow(std::max(0.0, dot(refl, view)), kSpecularExponent);
            }
            a(i, j) = rho[static_cast<std::size_t>(i)] * (diffuse + spec) * foreshorten;
        }
    }

    double brightest = a.rowwise().sum().maxCoeff();
    if (!(brightest > 0.0))
        throw ConfigError("build_transport_matrix: transport is identically zero (fully occluded?)");
    TransportMatrix out;
    out.entries = a / brightest;
    out.cond = cond;
    out.geom = geom;
    out.normalizer = 1.0 / brightest;
    return out;
}

ImageGrid render_projection(const TransportMatrix& A, const ImageGrid& hidden,
                            std::uint64_t noise_seed) {
    if (hidden.h != A.geom.hidden_h || hidden.w != A.geom.hidden_w)
        throw DimensionError("render_projection: hidden image is " + std::to_string(hidden.h) + "x" +
                             std::to_string(hidden.w) + ", transport expects " +
                             std::to_string(A.geom.hidden_h) + "x" + std::to_string(A.geom.hidden_w));
    const int rows = A.wall_pixels();
    const int cols = A.hidden_pixels();

    ImageGrid y(A.geom.wall_h, A.geom.wall_w, hidden.c);
    Rng rng(derive_seed(noise_seed, 0x9e11d3u));
    Eigen::VectorXd x(cols), proj(rows);
    for (int ch = 0; ch < hidden.c; ++ch) {
        for (int j = 0; j < cols; ++j)
            x(j) = hidden.v[static_cast<std::size_t>(j) * hidden.c + ch];
        proj = A.entries * x;
        for (int i = 0; i < rows; ++i) {
            double v = proj(i) + A.cond.ambient_floor;
            if (A.cond.noise_sigma > 0.0) v += rng.normal(0.0, A.cond.noise_sigma);
            y.v[static_cast<std::size_t>(i) * hidden.c + ch] = v;
        }
    }
    y.clip01();
    return y;
}

ImageGrid classical_reconstruct(const TransportMatrix& A, const ImageGrid& projection, double reg) {
    if (projection.h != A.geom.wall_h || projection.w != A.geom.wall_w)
        throw DimensionError("classical_reconstruct: projection resolution does not match transport");
    if (reg < 0.0) throw ContractError("classical_reconstruct: reg must be >= 0");

    const int cols = A.hidden_pixels();
    Eigen::MatrixXd normal = A.entries.transpose() * A.entries;
    normal.diagonal().array() += reg;

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(normal);
    if (reg == 0.0 && !(lu.rcond() > 1e-17))
        throw IllConditionedError(
            "classical_reconstruct: normal matrix numerically singular with reg = 0 (rcond below "
            "1e-17); pass reg > 0");

    ImageGrid x(A.geom.hidden_h, A.geom.hidden_w, projection.c);
    Eigen::VectorXd yv(A.wall_pixels()), sol(cols);
    for (int ch = 0; ch < projection.c; ++ch) {
        for (int i = 0; i < A.wall_pixels(); ++i)
            yv(i) = projection.v[static_cast<std::size_t>(i) * projection.c + ch];
        sol = lu.solve(A.entries.transpose() * yv);
        if (!sol.allFinite()) throw NumericError("classical_reconstruct: non-finite solution");
        for (int j = 0; j < cols; ++j)
            x.v[static_cast<std::size_t>(j) * projection.c + ch] = sol(j);
    }
    x.clip01();
    return x;
}

double condition_number(const Eigen::MatrixXd& m) {
    if (!m.allFinite()) throw NumericError("condition_number: non-finite entries");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    double smax = sv(0);
    double smin = sv(sv.size() - 1);
    if (smin < 1e-300) return std::numeric_limits<double>::infinity();
    return smax / smin;
}

double condition_number(const TransportMatrix& A) { return condition_number(A.entries); }

void save_transport(const std::filesystem::path& path, const TransportMatrix& A) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_transport: cannot open " + path.string());
    out.write("NLTM1", 5);
    std::uint32_t rows = static_cast<std::uint32_t>(A.entries.rows());
    std::uint32_t cols = static_cast<std::uint32_t>(A.entries.cols());
    write_bytes(out, &rows, 4);
    write_bytes(out, &cols, 4);
    write_bytes(out, &A.normalizer, 8);
    // Row-major float64 payload.
    for (Eigen::Index i = 0; i < A.entries.rows(); ++i)
        for (Eigen::Index j = 0; j < A.entries.cols(); ++j) {
            double v = A.entries(i, j);
            write_bytes(out, &v, 8);
        }
    std::string meta = canonical_text(A.cond) + canonical_text(A.geom);
    std::uint32_t mlen = static_cast<std::uint32_t>(meta.size());
    write_bytes(out, &mlen, 4);
    write_bytes(out, meta.data(), meta.size());
    if (!out) throw IoError("save_transport: write failed for " + path.string());
}

TransportMatrix load_transport(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_transport: cannot open " + path.string());
    char magic[5];
    read_bytes(in, magic, 5);
    if (std::memcmp(magic, "NLTM1", 5) != 0)
        throw IntegrityError("load_transport: bad magic in " + path.string());
    std::uint32_t rows = 0, cols = 0, mlen = 0;
    read_bytes(in, &rows, 4);
    read_bytes(in, &cols, 4);
    TransportMatrix A;
    read_bytes(in, &A.normalizer, 8);
    A.entries.resize(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) {
            double v;
            read_bytes(in, &v, 8);
            A.entries(i, j) = v;
        }
    read_bytes(in, &mlen, 4);
    std::string meta(mlen, '\0');
    read_bytes(in, meta.data(), mlen);
    A.cond = parse_condition_text(meta);
    A.geom = parse_geometry_text(meta);
    return A;
}

std::filesystem::path transport_cache_path(const std::filesystem::path& cache_dir,
                                           const ConditionSpec& cond, const SceneGeometry& geom) {
    return cache_dir / (hex64(transport_key(cond, geom)) + ".nltm");
}

TransportMatrix cached_transport(const std::filesystem::path& cache_dir, const ConditionSpec& cond,
                                 const SceneGeometry& geom) {
    std::filesystem::create_directories(cache_dir);
    auto path = transport_cache_path(cache_dir, cond, geom);
    if (std::filesystem::exists(path)) {
        TransportMatrix A = load_transport(path);
        A.cond.id = cond.id;  // cache is keyed physically; restore the label
        return A;
    }
    TransportMatrix A = build_transport_matrix(cond, geom);
    save_transport(path, A);
    return A;
}

}  // namespace nlosim::lightsim
