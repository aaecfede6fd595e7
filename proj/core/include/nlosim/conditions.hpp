#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace nlosim {

enum class AngleId { one = 1, two = 2 };
enum class Illumination { ambient_dark, daylight };
enum class SurfaceKind { wall, whiteboard };

/// Axis-aligned opaque rectangle between the hidden plane and the relay
/// wall. Center (cx,cy) and size are in scene cm, in a plane parallel to the
/// wall at `standoff_cm` in front of it.
struct Occluder {
    double cx_cm = 0.0;
    double cy_cm = 0.0;
    double width_cm = 0.0;
    double height_cm = 0.0;
    double standoff_cm = 0.0;

    bool operator==(const Occluder&) const = default;
};

/// One light transport condition: distance, camera angle, illumination and
/// relay surface, plus the optional occluder. The numeric fields carry the
/// per-enum defaults (ambient floor, noise level, albedo, specular mix) so a
/// condition is self-contained; make_condition() fills them in.
struct ConditionSpec {
    int id = 0;
    double distance_cm = 70.0;
    AngleId angle = AngleId::one;
    Illumination illumination = Illumination::ambient_dark;
    double ambient_floor = 0.0;  // b
    double noise_sigma = 0.005;  // sigma
    SurfaceKind surface = SurfaceKind::wall;
    double albedo = 0.6;        // rho
    double specular_mix = 0.0;  // s
    std::optional<Occluder> occluder;

    bool operator==(const ConditionSpec&) const = default;

    /// Equality of everything except the label id: two physically identical
    /// conditions merge when manifests are mixed.
    bool physically_equal(const ConditionSpec& o) const;

    /// Throws ConfigError on violated invariants (distance, sigma, s range,
    /// zero-area occluder, occluder outside the plane gap).
    void validate() const;

    /// Compact "D;angle;illum;surface" tag in the dataset-table style, e.g.
    /// "70;1;A;Wall".
    std::string short_name() const;
};

/// Dark ambient: b=0, sigma=0.005. Daylight: b=0.15, sigma=0.02.
/// Wall: rho=0.6, s=0 (plus seeded per-patch albedo texture in the builder).
/// Whiteboard: rho=0.95, s=0.3.
ConditionSpec make_condition(int id, double distance_cm, AngleId angle, Illumination illum,
                             SurfaceKind surface, std::optional<Occluder> occluder = std::nullopt);

/// Parses a "70;1;A;Wall" style tag (case-insensitive; A/L or dark/day,
/// Wall/Wb). Throws ConfigError on malformed input.
ConditionSpec parse_condition_tag(int id, const std::string& tag,
                                  std::optional<Occluder> occluder = std::nullopt);

/// Planar scene: hidden image plane facing the relay wall.
struct SceneGeometry {
    int hidden_h = 16;
    int hidden_w = 16;
    int wall_h = 16;
    int wall_w = 16;
    double hidden_size_h_cm = 61.0;
    double hidden_size_w_cm = 61.0;
    double wall_size_h_cm = 59.0;
    double wall_size_w_cm = 59.0;
    std::uint64_t geometry_seed = 0;

    bool operator==(const SceneGeometry&) const = default;

    /// Throws ConfigError when resolutions < 2 or physical sizes <= 0.
    void validate() const;
};

/// Canonical, line-oriented text encodings. These feed content hashes for
/// the transport-matrix cache and ride along in serialized containers, so
/// their byte layout is stable.
std::string canonical_text(const ConditionSpec& c);
std::string canonical_text(const SceneGeometry& g);
ConditionSpec parse_condition_text(const std::string& text);
SceneGeometry parse_geometry_text(const std::string& text);

/// Content hash of (cond, geom) ignoring the label id; keys the disk cache.
std::uint64_t transport_key(const ConditionSpec& c, const SceneGeometry& g);

}  // namespace nlosim
