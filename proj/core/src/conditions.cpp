#include "nlosim/conditions.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>

#include "nlosim/common.hpp"

namespace nlosim {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

double want_num(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("condition/geometry text missing key " + key);
    return std::stod(it->second);
}

}  // namespace

bool ConditionSpec::physically_equal(const ConditionSpec& o) const {
    ConditionSpec a = *this, b = o;
    a.id = b.id = 0;
    return a == b;
}

void ConditionSpec::validate() const {
    if (!(distance_cm > 0.0)) throw ConfigError("condition: distance_cm must be > 0");
    if (noise_sigma < 0.0) throw ConfigError("condition: noise_sigma must be >= 0");
    if (ambient_floor < 0.0) throw ConfigError("condition: ambient_floor must be >= 0");
    if (!(albedo > 0.0 && albedo <= 1.0)) throw ConfigError("condition: albedo must be in (0,1]");
    if (!(specular_mix >= 0.0 && specular_mix < 1.0))
        throw ConfigError("condition: specular_mix must be in [0,1)");
    if (occluder) {
        if (!(occluder->width_cm > 0.0) || !(occluder->height_cm > 0.0))
            throw ConfigError("condition: occluder has zero area");
        if (!(occluder->standoff_cm > 0.0) || !(occluder->standoff_cm < distance_cm))
            throw ConfigError("condition: occluder standoff must lie strictly between wall and hidden plane");
    }
}

std::string ConditionSpec::short_name() const {
    std::string s = fmt_double(distance_cm);
    // Trim "70" out of "70" cleanly for integral distances.
    double r = distance_cm;
    if (r == static_cast<double>(static_cast<long long>(r)))
        s = std::to_string(static_cast<long long>(r));
    s += ";";
    s += (angle == AngleId::one) ? "1" : "2";
    s += ";";
    s += (illumination == Illumination::ambient_dark) ? "A" : "L";
    s += ";";
    s += (surface == SurfaceKind::wall) ? "Wall" : "Wb";
    return s;
}

ConditionSpec make_condition(int id, double distance_cm, AngleId angle, Illumination illum,
                             SurfaceKind surface, std::optional<Occluder> occluder) {
    ConditionSpec c;
    c.id = id;
    c.distance_cm = distance_cm;
    c.angle = angle;
    c.illumination = illum;
    c.surface = surface;
    c.occluder = occluder;
    if (illum == Illumination::daylight) {
        c.ambient_floor = 0.15;
        c.noise_sigma = 0.02;
    } else {
        c.ambient_floor = 0.0;
        c.noise_sigma = 0.005;
    }
    if (surface == SurfaceKind::whiteboard) {
        c.albedo = 0.95;
        c.specular_mix = 0.3;
    } else {
        c.albedo = 0.6;
        c.specular_mix = 0.0;
    }
    c.validate();
    return c;
}

ConditionSpec parse_condition_tag(int id, const std::string& tag, std::optional<Occluder> occluder) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : tag) {
        if (ch == ';') {
            parts.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(ch))) {
            cur += ch;
        }
    }
    parts.push_back(cur);
    if (parts.size() != 4) throw ConfigError("condition tag must have 4 ';'-separated fields: " + tag);

    double d = 0.0;
    try {
        d = std::stod(parts[0]);
    } catch (const std::exception&) {
        throw ConfigError("condition tag: bad distance in " + tag);
    }
    AngleId angle;
    if (parts[1] == "1")
        angle = AngleId::one;
    else if (parts[1] == "2")
        angle = AngleId::two;
    else
        throw ConfigError("condition tag: angle must be 1 or 2 in " + tag);

    std::string il = lower(parts[2]);
    Illumination illum;
    if (il == "a" || il == "dark")
        illum = Illumination::ambient_dark;
    else if (il == "l" || il == "day" || il == "daylight")
        illum = Illumination::daylight;
    else
        throw ConfigError("condition tag: illumination must be A or L in " + tag);

    std::string sf = lower(parts[3]);
    SurfaceKind surface;
    if (sf == "wall")
        surface = SurfaceKind::wall;
    else if (sf == "wb" || sf == "whiteboard")
        surface = SurfaceKind::whiteboard;
    else
        throw ConfigError("condition tag: surface must be Wall or Wb in " + tag);

    return make_condition(id, d, angle, illum, surface, occluder);
}

void SceneGeometry::validate() const {
    if (hidden_h < 2 || hidden_w < 2 || wall_h < 2 || wall_w < 2)
        throw ConfigError("geometry: all resolutions must be >= 2");
    if (!(hidden_size_h_cm > 0.0 && hidden_size_w_cm > 0.0 && wall_size_h_cm > 0.0 &&
          wall_size_w_cm > 0.0))
        throw ConfigError("geometry: physical sizes must be > 0");
}

std::string canonical_text(const ConditionSpec& c) {
    std::ostringstream out;
    out << "cond.id=" << c.id << "\n";
    out << "cond.distance_cm=" << fmt_double(c.distance_cm) << "\n";
    out << "cond.angle=" << (c.angle == AngleId::one ? 1 : 2) << "\n";
    out << "cond.illumination=" << (c.illumination == Illumination::ambient_dark ? "dark" : "daylight")
        << "\n";
    out << "cond.ambient_floor=" << fmt_double(c.ambient_floor) << "\n";
    out << "cond.noise_sigma=" << fmt_double(c.noise_sigma) << "\n";
    out << "cond.surface=" << (c.surface == SurfaceKind::wall ? "wall" : "whiteboard") << "\n";
    out << "cond.albedo=" << fmt_double(c.albedo) << "\n";
    out << "cond.specular_mix=" << fmt_double(c.specular_mix) << "\n";
    if (c.occluder) {
        out << "cond.occluder=1\n";
        out << "cond.occluder.cx_cm=" << fmt_double(c.occluder->cx_cm) << "\n";
        out << "cond.occluder.cy_cm=" << fmt_double(c.occluder->cy_cm) << "\n";
        out << "cond.occluder.width_cm=" << fmt_double(c.occluder->width_cm) << "\n";
        out << "cond.occluder.height_cm=" << fmt_double(c.occluder->height_cm) << "\n";
        out << "cond.occluder.standoff_cm=" << fmt_double(c.occluder->standoff_cm) << "\n";
    } else {
        out << "cond.occluder=0\n";
    }
    return out.str();
}

std::string canonical_text(const SceneGeometry& g) {
    std::ostringstream out;
    out << "geom.hidden_h=" << g.hidden_h << "\n";
    out << "geom.hidden_w=" << g.hidden_w << "\n";
    out << "geom.wall_h=" << g.wall_h << "\n";
    out << "geom.wall_w=" << g.wall_w << "\n";
    out << "geom.hidden_size_h_cm=" << fmt_double(g.hidden_size_h_cm) << "\n";
    out << "geom.hidden_size_w_cm=" << fmt_double(g.hidden_size_w_cm) << "\n";
    out << "geom.wall_size_h_cm=" << fmt_double(g.wall_size_h_cm) << "\n";
    out << "geom.wall_size_w_cm=" << fmt_double(g.wall_size_w_cm) << "\n";
    out << "geom.geometry_seed=" << g.geometry_seed << "\n";
    return out.str();
}

ConditionSpec parse_condition_text(const std::string& text) {
    auto kv = parse_kv(text);
    ConditionSpec c;
    c.id = static_cast<int>(want_num(kv, "cond.id"));
    c.distance_cm = want_num(kv, "cond.distance_cm");
    c.angle = want_num(kv, "cond.angle") == 1 ? AngleId::one : AngleId::two;
    c.illumination =
        kv.at("cond.illumination") == "dark" ? Illumination::ambient_dark : Illumination::daylight;
    c.ambient_floor = want_num(kv, "cond.ambient_floor");
    c.noise_sigma = want_num(kv, "cond.noise_sigma");
    c.surface = kv.at("cond.surface") == "wall" ? SurfaceKind::wall : SurfaceKind::whiteboard;
    c.albedo = want_num(kv, "cond.albedo");
    c.specular_mix = want_num(kv, "cond.specular_mix");
    if (want_num(kv, "cond.occluder") != 0) {
        Occluder o;
        o.cx_cm = want_num(kv, "cond.occluder.cx_cm");
        o.cy_cm = want_num(kv, "cond.occluder.cy_cm");
        o.width_cm = want_num(kv, "cond.occluder.width_cm");
        o.height_cm = want_num(kv, "cond.occluder.height_cm");
        o.standoff_cm = want_num(kv, "cond.occluder.standoff_cm");
        c.occluder = o;
    }
    return c;
}

SceneGeometry parse_geometry_text(const std::string& text) {
    auto kv = parse_kv(text);
    SceneGeometry g;
    g.hidden_h = static_cast<int>(want_num(kv, "geom.hidden_h"));
    g.hidden_w = static_cast<int>(want_num(kv, "geom.hidden_w"));
    g.wall_h = static_cast<int>(want_num(kv, "geom.wall_h"));
    g.wall_w = static_cast<int>(want_num(kv, "geom.wall_w"));
    g.hidden_size_h_cm = want_num(kv, "geom.hidden_size_h_cm");
    g.hidden_size_w_cm = want_num(kv, "geom.hidden_size_w_cm");
    g.wall_size_h_cm = want_num(kv, "geom.wall_size_h_cm");
    g.wall_size_w_cm = want_num(kv, "geom.wall_size_w_cm");
    g.geometry_seed = static_cast<std::uint64_t>(want_num(kv, "geom.geometry_seed"));
    return g;
}

std::uint64_t transport_key(const ConditionSpec& c, const SceneGeometry& g) {
    ConditionSpec cc = c;
    cc.id = 0;  // cache key is physical identity
    return fnv1a64(canonical_text(cc) + canonical_text(g));
}

}  // namespace nlosim
