#include "nlosim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "nlosim/common.hpp"
#include "nlosim/lightsim.hpp"

namespace nlosim::dataset {

using ordered_json = nlohmann::ordered_json;

std::string split_name(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (expected train or test)");
}

std::size_t Manifest::count(Split s) const {
    std::size_t n = 0;
    for (const auto& r : records)
        if (r.split == s) ++n;
    return n;
}

void Manifest::validate() const {
    if (hidden_h < 2 || hidden_w < 2 || wall_h < 2 || wall_w < 2)
        throw ConfigError("manifest: resolutions must be >= 2");
    if (channels != 1 && channels != 3) throw ConfigError("manifest: channels must be 1 or 3");
    for (std::size_t i = 0; i < conditions.size(); ++i)
        if (conditions[i].id != static_cast<int>(i))
            throw ConfigError("manifest: condition ids must be contiguous from 0");
    for (const auto& r : records)
        if (r.condition_id < 0 || r.condition_id >= static_cast<int>(conditions.size()))
            throw ConfigError("manifest: record references unknown condition id " +
                              std::to_string(r.condition_id));
}

namespace {

ordered_json cond_to_json(const ConditionSpec& c) {
    ordered_json j;
    j["id"] = c.id;
    j["distance_cm"] = c.distance_cm;
    j["angle"] = c.angle == AngleId::one ? 1 : 2;
    j["illumination"] = c.illumination == Illumination::ambient_dark ? "dark" : "daylight";
    j["ambient_floor"] = c.ambient_floor;
    j["noise_sigma"] = c.noise_sigma;
    j["surface"] = c.surface == SurfaceKind::wall ? "wall" : "whiteboard";
    j["albedo"] = c.albedo;
    j["specular_mix"] = c.specular_mix;
    if (c.occluder) {
        j["occluder"] = {{"cx_cm", c.occluder->cx_cm},
                         {"cy_cm", c.occluder->cy_cm},
                         {"width_cm", c.occluder->width_cm},
                         {"height_cm", c.occluder->height_cm},
                         {"standoff_cm", c.occluder->standoff_cm}};
    }
    return j;
}

ConditionSpec cond_from_json(const ordered_json& j) {
    ConditionSpec c;
    c.id = j.at("id").get<int>();
    c.distance_cm = j.at("distance_cm").get<double>();
    c.angle = j.at("angle").get<int>() == 1 ? AngleId::one : AngleId::two;
    c.illumination = j.at("illumination").get<std::string>() == "dark" ? Illumination::ambient_dark
                                                                       : Illumination::daylight;
    c.ambient_floor = j.at("ambient_floor").get<double>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.surface =
        j.at("surface").get<std::string>() == "wall" ? SurfaceKind::wall : SurfaceKind::whiteboard;
    c.albedo = j.at("albedo").get<double>();
    c.specular_mix = j.at("specular_mix").get<double>();
    if (j.contains("occluder")) {
        Occluder o;
        const auto& jo = j.at("occluder");
        o.cx_cm = jo.at("cx_cm").get<double>();
        o.cy_cm = jo.at("cy_cm").get<double>();
        o.width_cm = jo.at("width_cm").get<double>();
        o.height_cm = jo.at("height_cm").get<double>();
        o.standoff_cm = jo.at("standoff_cm").get<double>();
        c.occluder = o;
    }
    return c;
}

}  // namespace

void Manifest::save(const std::filesystem::path& path) const {
    validate();
    ordered_json j;
    j["format_version"] = format_version;
    j["hidden_res"] = {hidden_h, hidden_w};
    j["wall_res"] = {wall_h, wall_w};
    j["channels"] = channels;
    if (geometry) {
        j["geometry"] = {{"hidden_res", {geometry->hidden_h, geometry->hidden_w}},
                         {"wall_res", {geometry->wall_h, geometry->wall_w}},
                         {"hidden_size_cm", {geometry->hidden_size_h_cm, geometry->hidden_size_w_cm}},
                         {"wall_size_cm", {geometry->wall_size_h_cm, geometry->wall_size_w_cm}},
                         {"geometry_seed", geometry->geometry_seed}};
    }
    j["conditions"] = ordered_json::array();
    for (const auto& c : conditions) j["conditions"].push_back(cond_to_json(c));
    j["records"] = ordered_json::array();
    auto base = path.parent_path();
    for (const auto& r : records) {
        std::filesystem::path hp = r.hidden_path, pp = r.projection_path;
        if (hp.is_absolute()) hp = std::filesystem::relative(hp, base);
        if (pp.is_absolute()) pp = std::filesystem::relative(pp, base);
        j["records"].push_back({{"hidden", hp.generic_string()},
                                {"proj", pp.generic_string()},
                                {"condition_id", r.condition_id},
                                {"split", split_name(r.split)}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("manifest save: cannot open " + path.string());
    out << j.dump(2) << "\n";
}

Manifest Manifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest load: cannot open " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw IoError("manifest load: bad JSON in " + path.string() + ": " + e.what());
    }
    Manifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1)
        throw IntegrityError("manifest load: unsupported format_version " +
                             std::to_string(m.format_version));
    m.hidden_h = j.at("hidden_res").at(0).get<int>();
    m.hidden_w = j.at("hidden_res").at(1).get<int>();
    m.wall_h = j.at("wall_res").at(0).get<int>();
    m.wall_w = j.at("wall_res").at(1).get<int>();
    m.channels = j.at("channels").get<int>();
    if (j.contains("geometry")) {
        SceneGeometry g;
        const auto& jg = j.at("geometry");
        g.hidden_h = jg.at("hidden_res").at(0).get<int>();
        g.hidden_w = jg.at("hidden_res").at(1).get<int>();
        g.wall_h = jg.at("wall_res").at(0).get<int>();
        g.wall_w = jg.at("wall_res").at(1).get<int>();
        g.hidden_size_h_cm = jg.at("hidden_size_cm").at(0).get<double>();
        g.hidden_size_w_cm = jg.at("hidden_size_cm").at(1).get<double>();
        g.wall_size_h_cm = jg.at("wall_size_cm").at(0).get<double>();
        g.wall_size_w_cm = jg.at("wall_size_cm").at(1).get<double>();
        g.geometry_seed = jg.at("geometry_seed").get<std::uint64_t>();
        m.geometry = g;
    }
    for (const auto& jc : j.at("conditions")) m.conditions.push_back(cond_from_json(jc));
    for (const auto& jr : j.at("records")) {
        SampleRecord r;
        r.hidden_path = jr.at("hidden").get<std::string>();
        r.projection_path = jr.at("proj").get<std::string>();
        r.condition_id = jr.at("condition_id").get<int>();
        r.split = parse_split(jr.at("split").get<std::string>());
        m.records.push_back(r);
    }
    m.root = std::filesystem::absolute(path).parent_path();
    m.validate();
    return m;
}

std::uint64_t projection_noise_seed(std::uint64_t dataset_seed, int condition_id, int index) {
    return derive_seed(dataset_seed, 0x9015eu, static_cast<std::uint64_t>(condition_id),
                       static_cast<std::uint64_t>(index));
}

ImageGrid procedural_hidden(int h, int w, int c, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xd161b5u));
    ImageGrid img(h, w, c);
    std::vector<double> tint(static_cast<std::size_t>(c), 1.0);
    if (c == 3)
        for (auto& t : tint) t = rng.uniform(0.5, 1.0);

    auto paint = [&](double yy, double xx, double radius, double value) {
        int y0 = std::max(0, static_cast<int>(std::floor(yy - radius)));
        int y1 = std::min(h - 1, static_cast<int>(std::ceil(yy + radius)));
        int x0 = std::max(0, static_cast<int>(std::floor(xx - radius)));
        int x1 = std::min(w - 1, static_cast<int>(std::ceil(xx + radius)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dy = y - yy, dx = x - xx;
                if (dy * dy + dx * dx <= radius * radius)
                    for (int ch = 0; ch < c; ++ch)
                        img.at(y, x, ch) = std::max(img.at(y, x, ch), value * tint[static_cast<std::size_t>(ch)]);
            }
    };

    int strokes = 1 + rng.uniform_int(3);
    for (int s = 0; s < strokes; ++s) {
        if (rng.uniform() < 0.5) {
            // Digit-like stroke: a slowly turning random walk.
            double cy = rng.uniform(0.2, 0.8) * h;
            double cx = rng.uniform(0.2, 0.8) * w;
            double angle = rng.uniform(0.0, 2.0 * M_PI);
            double radius = rng.uniform() < 0.5 ? 0.6 : 1.1;
            double value = rng.uniform(0.6, 1.0);
            int steps = static_cast<int>(1.2 * std::max(h, w));
            for (int i = 0; i < steps; ++i) {
                paint(cy, cx, radius, value);
                angle += rng.uniform(-0.5, 0.5);
                cy += std::sin(angle);
                cx += std::cos(angle);
                if (cy < 1 || cy > h - 2 || cx < 1 || cx > w - 2) angle += M_PI / 2;
            }
        } else {
            // Rectangle, outlined or filled.
            int y0 = rng.uniform_int(h - 4);
            int x0 = rng.uniform_int(w - 4);
            int y1 = y0 + 2 + rng.uniform_int(h - y0 - 2);
            int x1 = x0 + 2 + rng.uniform_int(w - x0 - 2);
            double value = rng.uniform(0.5, 1.0);
            bool filled = rng.uniform() < 0.4;
            for (int y = y0; y <= y1 && y < h; ++y)
                for (int x = x0; x <= x1 && x < w; ++x) {
                    bool edge = y == y0 || y == y1 || x == x0 || x == x1;
                    if (filled || edge)
                        for (int ch = 0; ch < c; ++ch)
                            img.at(y, x, ch) =
                                std::max(img.at(y, x, ch), value * tint[static_cast<std::size_t>(ch)]);
                }
        }
    }
    img.clip01();
    return img;
}

Manifest generate_synthetic_dataset(const std::vector<ConditionSpec>& conds,
                                    const SceneGeometry& geom, const GenerateOptions& opt) {
    if (conds.empty()) throw ConfigError("generate: need at least one condition");
    if (opt.train_count < 1 || opt.test_count < 0)
        throw ConfigError("generate: counts must be >= 1 train / >= 0 test");
    geom.validate();
    for (std::size_t i = 0; i < conds.size(); ++i) {
        conds[i].validate();
        if (conds[i].id != static_cast<int>(i))
            throw ConfigError("generate: condition ids must be contiguous from 0");
    }

    std::filesystem::create_directories(opt.out_root);
    auto cache = opt.transport_cache.empty() ? opt.out_root / "transport_cache" : opt.transport_cache;

    // Source images: user directory or the builtin procedural set.
    int total = opt.train_count + opt.test_count;
    std::vector<ImageGrid> hidden(static_cast<std::size_t>(total));
    if (!opt.source_dir.empty()) {
        std::vector<std::filesystem::path> files;
        if (!std::filesystem::is_directory(opt.source_dir))
            throw IoError("generate: source dir does not exist: " + opt.source_dir.string());
        for (const auto& e : std::filesystem::directory_iterator(opt.source_dir))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (static_cast<int>(files.size()) < total)
            throw ConfigError("generate: source dir has " + std::to_string(files.size()) +
                              " files, need " + std::to_string(total));
        std::vector<std::string> bad;
        for (int i = 0; i < total; ++i) {
            try {
                ImageGrid src = load_png16(files[static_cast<std::size_t>(i)]);
                if (src.h != geom.hidden_h || src.w != geom.hidden_w || src.c != opt.channels)
                    throw IoError("resolution/channel mismatch");
                hidden[static_cast<std::size_t>(i)] = src;
            } catch (const std::exception& e) {
                bad.push_back(files[static_cast<std::size_t>(i)].string() + ": " + e.what());
            }
        }
        if (!bad.empty()) {
            std::string msg = "generate: unreadable source images:";
            for (const auto& b : bad) msg += "\n  " + b;
            throw IoError(msg);
        }
    } else {
        for (int i = 0; i < total; ++i)
            hidden[static_cast<std::size_t>(i)] =
                procedural_hidden(geom.hidden_h, geom.hidden_w, opt.channels,
                                  derive_seed(opt.seed, 0x41d5u, static_cast<std::uint64_t>(i)));
    }
    // Snap hidden values to the on-disk quantization first, so a stored
    // (hidden, projection) pair regenerates exactly from its files.
    for (auto& img : hidden)
        for (auto& v : img.v) v = png16_quantize(v);

    // Seeded train/test assignment per hidden image.
    std::vector<int> indices(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) indices[static_cast<std::size_t>(i)] = i;
    deterministic_shuffle(indices, derive_seed(opt.seed, 0x5911144u));
    std::vector<Split> split_of(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i)
        split_of[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])] =
            i < opt.train_count ? Split::train : Split::test;

    Manifest m;
    m.hidden_h = geom.hidden_h;
    m.hidden_w = geom.hidden_w;
    m.wall_h = geom.wall_h;
    m.wall_w = geom.wall_w;
    m.channels = opt.channels;
    m.geometry = geom;
    m.conditions = conds;
    m.records.resize(static_cast<std::size_t>(total) * conds.size());

    for (const auto& cond : conds) {
        lightsim::TransportMatrix A = lightsim::cached_transport(cache, cond, geom);
        auto cdir = opt.out_root / std::to_string(cond.id);
        std::filesystem::create_directories(cdir / "train");
        std::filesystem::create_directories(cdir / "test");

        parallel_for(total, opt.threads, [&](int i) {
            Split sp = split_of[static_cast<std::size_t>(i)];
            const ImageGrid& x = hidden[static_cast<std::size_t>(i)];
            std::uint64_t noise = projection_noise_seed(opt.seed, cond.id, i);
            ImageGrid y = lightsim::render_projection(A, x, noise);
            char idx[16];
            std::snprintf(idx, sizeof(idx), "%06d", i);
            auto hp = cdir / split_name(sp) / (std::string(idx) + "_hidden.png16");
            auto pp = cdir / split_name(sp) / (std::string(idx) + "_proj.png16");
            save_png16(hp, x);
            save_png16(pp, y);
            SampleRecord r;
            r.hidden_path = hp.string();
            r.projection_path = pp.string();
            r.condition_id = cond.id;
            r.split = sp;
            m.records[static_cast<std::size_t>(cond.id) * total + i] = r;
        });
    }

    m.save(opt.out_root / "manifest.json");
    return Manifest::load(opt.out_root / "manifest.json");
}

Manifest mix_manifests(const std::vector<Manifest>& parts) {
    if (parts.empty()) throw ConfigError("mix: no parts");
    Manifest out;
    out.hidden_h = parts[0].hidden_h;
    out.hidden_w = parts[0].hidden_w;
    out.wall_h = parts[0].wall_h;
    out.wall_w = parts[0].wall_w;
    out.channels = parts[0].channels;
    out.geometry = parts[0].geometry;
    out.root = parts[0].root;

    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Manifest& part = parts[p];
        if (part.hidden_h != out.hidden_h || part.hidden_w != out.hidden_w ||
            part.wall_h != out.wall_h || part.wall_w != out.wall_w || part.channels != out.channels)
            throw DimensionError("mix: resolution mismatch in part " + std::to_string(p));

        std::vector<int> remap(part.conditions.size());
        for (std::size_t ci = 0; ci < part.conditions.size(); ++ci) {
            const ConditionSpec& c = part.conditions[ci];
            int found = -1;
            for (std::size_t k = 0; k < out.conditions.size(); ++k)
                if (out.conditions[k].physically_equal(c)) {
                    found = static_cast<int>(k);
                    break;
                }
            if (found < 0) {
                ConditionSpec copy = c;
                copy.id = static_cast<int>(out.conditions.size());
                out.conditions.push_back(copy);
                found = copy.id;
            }
            remap[ci] = found;
        }
        for (const auto& r : part.records) {
            SampleRecord nr = r;
            // Rebase onto the part root so mixed manifests resolve correctly.
            nr.hidden_path = (part.root / r.hidden_path).string();
            nr.projection_path = (part.root / r.projection_path).string();
            nr.condition_id = remap[static_cast<std::size_t>(r.condition_id)];
            out.records.push_back(nr);
        }
    }
    out.validate();
    return out;
}

Manifest ingest_directory(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root))
        throw IoError("ingest: not a directory: " + root.string());
    std::vector<std::filesystem::path> cond_dirs;
    for (const auto& e : std::filesystem::directory_iterator(root))
        if (e.is_directory()) cond_dirs.push_back(e.path());
    std::sort(cond_dirs.begin(), cond_dirs.end());
    if (cond_dirs.empty()) throw IoError("ingest: no condition folders under " + root.string());

    Manifest m;
    m.root = std::filesystem::absolute(root);
    std::vector<std::string> bad;
    for (std::size_t ci = 0; ci < cond_dirs.size(); ++ci) {
        ConditionSpec cond;
        try {
            cond = parse_condition_tag(static_cast<int>(ci), cond_dirs[ci].filename().string());
        } catch (const ConfigError&) {
            cond = make_condition(static_cast<int>(ci), 70.0, AngleId::one,
                                  Illumination::ambient_dark, SurfaceKind::wall);
        }
        cond.id = static_cast<int>(ci);
        m.conditions.push_back(cond);

        for (Split sp : {Split::train, Split::test}) {
            auto sdir = cond_dirs[ci] / split_name(sp);
            if (!std::filesystem::is_directory(sdir)) continue;
            std::vector<std::filesystem::path> hiddens;
            for (const auto& e : std::filesystem::directory_iterator(sdir)) {
                auto name = e.path().filename().string();
                if (name.find("_hidden.") != std::string::npos) hiddens.push_back(e.path());
            }
            std::sort(hiddens.begin(), hiddens.end());
            for (const auto& hp : hiddens) {
                auto pname = hp.filename().string();
                auto pos = pname.find("_hidden.");
                auto pp = hp.parent_path() / (pname.substr(0, pos) + "_proj" + pname.substr(pos + 7));
                if (!std::filesystem::exists(pp)) {
                    bad.push_back("missing projection for " + hp.string());
                    continue;
                }
                if (m.hidden_h == 0) {
                    ImageGrid probe_h = load_png16(hp);
                    ImageGrid probe_p = load_png16(pp);
                    m.hidden_h = probe_h.h;
                    m.hidden_w = probe_h.w;
                    m.wall_h = probe_p.h;
                    m.wall_w = probe_p.w;
                    m.channels = probe_h.c;
                }
                SampleRecord r;
                r.hidden_path = std::filesystem::relative(hp, m.root).string();
                r.projection_path = std::filesystem::relative(pp, m.root).string();
                r.condition_id = static_cast<int>(ci);
                r.split = sp;
                m.records.push_back(r);
            }
        }
    }
    if (!bad.empty()) {
        std::string msg = "ingest: incomplete pairs:";
        for (const auto& b : bad) msg += "\n  " + b;
        throw IoError(msg);
    }
    if (m.records.empty()) throw DataError("ingest: no sample pairs found");
    m.validate();
    return m;
}

BatchStream::BatchStream(const Manifest& m, Split split, int batch_size, std::uint64_t shuffle_seed)
    : m_(m), batch_size_(batch_size) {
    if (batch_size < 1) throw ContractError("BatchStream: batch_size must be >= 1");
    for (std::size_t i = 0; i < m.records.size(); ++i)
        if (m.records[i].split == split) order_.push_back(i);
    if (order_.empty())
        throw DataError("BatchStream: empty split '" + split_name(split) + "'");
    deterministic_shuffle(order_, derive_seed(shuffle_seed, 0xba7c4u));
}

std::optional<Batch> BatchStream::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    Batch b;
    std::size_t end = std::min(cursor_ + static_cast<std::size_t>(batch_size_), order_.size());
    for (std::size_t k = cursor_; k < end; ++k) {
        const SampleRecord& r = m_.records[order_[k]];
        b.hidden.push_back(nn::from_image(load_png16(m_.resolve(r.hidden_path))));
        b.projection.push_back(nn::from_image(load_png16(m_.resolve(r.projection_path))));
        b.condition_ids.push_back(r.condition_id);
        b.record_indices.push_back(order_[k]);
    }
    cursor_ = end;
    return b;
}

}  // namespace nlosim::dataset
