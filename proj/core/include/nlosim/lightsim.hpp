#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "nlosim/conditions.hpp"
#include "nlosim/image.hpp"

namespace nlosim::lightsim {

/// Dense nonnegative transport matrix A mapping vectorized hidden-image
/// intensities to relay-wall intensities: rows index wall patches
/// (wall_h*wall_w), columns index hidden pixels (hidden_h*hidden_w).
/// `normalizer` is the single global scale that maps the brightest possible
/// projection (all-ones hidden image) into [0,1].
struct TransportMatrix {
    Eigen::MatrixXd entries;
    ConditionSpec cond;
    SceneGeometry geom;
    double normalizer = 1.0;

    int wall_pixels() const { return geom.wall_h * geom.wall_w; }
    int hidden_pixels() const { return geom.hidden_h * geom.hidden_w; }
};

/// Radiometric model: for wall patch i and hidden pixel j,
///   A0_ij = rho_i * [ (1-s) * cos(theta_j) * cos(theta_i) / r_ij^2
///                     + s * max(0, cos(theta_spec))^50 ] * f_i * V_ij
/// where r_ij is pixel-to-patch distance, theta_j / theta_i are emission and
/// incidence angles against the plane normals, the specular lobe is measured
/// between the mirror direction and the per-patch camera direction, f_i is
/// the per-patch camera foreshortening implied by the camera angle, and
/// V_ij is hard occluder visibility. A = A0 / max_i(sum_j A0_ij).
/// Deterministic in (cond, geom); the wall surface carries a +-10% seeded
/// albedo texture, the whiteboard is untextured.
TransportMatrix build_transport_matrix(const ConditionSpec& cond, const SceneGeometry& geom);

/// Per-wall-patch diffuse albedo actually used by the builder (texture
/// included), indexed row-major over wall patches.
std::vector<double> per_patch_albedo(const ConditionSpec& cond, const SceneGeometry& geom);

/// y = clip(A x + b + n, 0, 1), n ~ N(0, sigma^2) drawn deterministically
/// from noise_seed. C=3 applies the same A per channel; noise is drawn
/// channel-major so each channel gets an independent slice of the stream.
ImageGrid render_projection(const TransportMatrix& A, const ImageGrid& hidden,
                            std::uint64_t noise_seed);

/// Tikhonov inverse via the normal equations:
///   x_hat = argmin ||A x - y||^2 + reg ||x||^2, clipped to [0,1].
/// reg == 0 on a numerically singular normal matrix raises
/// IllConditionedError instead of returning garbage.
ImageGrid classical_reconstruct(const TransportMatrix& A, const ImageGrid& projection, double reg);

/// sigma_max / sigma_min by full SVD; sigma_min below 1e-300 reports +inf.
double condition_number(const TransportMatrix& A);
double condition_number(const Eigen::MatrixXd& m);

/// Binary container, magic "NLTM1": row-major float64 entries followed by
/// the canonical condition+geometry text.
void save_transport(const std::filesystem::path& path, const TransportMatrix& A);
TransportMatrix load_transport(const std::filesystem::path& path);

/// Returns the matrix for (cond, geom) from `cache_dir`, building and
/// persisting it on a miss. Files are keyed by the content hash of the
/// physical condition + geometry.
TransportMatrix cached_transport(const std::filesystem::path& cache_dir, const ConditionSpec& cond,
                                 const SceneGeometry& geom);
std::filesystem::path transport_cache_path(const std::filesystem::path& cache_dir,
                                           const ConditionSpec& cond, const SceneGeometry& geom);

}  // namespace nlosim::lightsim
