#include "nlosim/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "nlosim/common.hpp"

namespace nlosim::training {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config: bad boolean for " + key + ": " + v);
}

struct Setter {
    TrainConfig& c;
    const std::string& key;
    const std::string& val;
    bool handled = false;

    void str(const char* k, std::string& dst) {
        if (!handled && key == k) {
            dst = val;
            handled = true;
        }
    }
    void i(const char* k, int& dst) {
        if (!handled && key == k) {
            dst = std::stoi(val);
            handled = true;
        }
    }
    void u64(const char* k, std::uint64_t& dst) {
        if (!handled && key == k) {
            dst = std::stoull(val);
            handled = true;
        }
    }
    void d(const char* k, double& dst) {
        if (!handled && key == k) {
            dst = std::stod(val);
            handled = true;
        }
    }
    void b(const char* k, bool& dst) {
        if (!handled && key == k) {
            dst = to_bool(val, key);
            handled = true;
        }
    }
};

void apply_kv(TrainConfig& c, const std::string& key, const std::string& val) {
    Setter s{c, key, val};
    s.str("manifest", c.manifest_path);
    s.str("out_dir", c.out_dir);
    s.str("cache_dir", c.cache_dir);

    s.i("arch.img_h", c.arch.img_h);
    s.i("arch.img_w", c.arch.img_w);
    s.i("arch.img_c", c.arch.img_c);
    s.i("arch.stages", c.arch.stages);
    s.i("arch.base_width", c.arch.base_width);
    s.i("arch.width_cap", c.arch.width_cap);
    s.i("arch.latent_channels", c.arch.latent_channels);
    s.i("arch.n_d", c.arch.n_d);
    s.i("arch.cond_width", c.arch.cond_width);
    s.i("arch.cond_map_width", c.arch.cond_map_width);
    s.i("arch.disc_width", c.arch.disc_width);
    s.i("arch.percep_width", c.arch.percep_width);
    s.b("arch.ltm_spatial", c.arch.ltm_spatial);

    s.b("ablate.no_ot", c.flags.no_ot);
    s.b("ablate.no_joint", c.flags.no_joint);
    s.b("ablate.single_scale_modulation", c.flags.single_scale_modulation);
    s.b("ablate.concat_modulation", c.flags.concat_modulation);
    s.b("ablate.no_vq", c.flags.no_vq);
    s.b("ablate.no_modulation", c.flags.no_modulation);

    s.d("loss.lambda1", c.weights.lambda1);
    s.d("loss.lambda2", c.weights.lambda2);
    s.d("loss.lambda_vq", c.weights.lambda_vq);
    s.d("loss.lambda_gan", c.weights.lambda_gan);
    s.d("loss.tau", c.weights.tau);
    s.d("loss.alpha", c.weights.alpha);
    s.d("loss.beta", c.weights.beta);

    s.i("ae.epochs", c.ae_epochs);
    s.d("ae.lr_start", c.ae_lr_start);
    s.d("ae.lr_end", c.ae_lr_end);
    s.d("ae.beta1", c.ae_beta1);
    s.d("ae.beta2", c.ae_beta2);
    s.d("ae.weight_decay", c.ae_weight_decay);

    s.i("joint.epochs", c.joint_epochs);
    s.d("joint.lr_start", c.joint_lr_start);
    s.d("joint.lr_end", c.joint_lr_end);
    s.d("joint.beta1", c.joint_beta1);
    s.d("joint.beta2", c.joint_beta2);
    s.d("joint.weight_decay", c.joint_weight_decay);

    s.i("batch_size", c.batch_size);
    s.u64("seed", c.seed);
    s.b("freeze_decoder", c.freeze_decoder);
    s.d("grad_clip", c.grad_clip);
    s.i("disc_steps_per_gen", c.disc_steps_per_gen);
    s.i("threads", c.threads);

    if (!s.handled && key == "conditions") {
        c.condition_tags.clear();
        std::istringstream in(val);
        std::string tag;
        while (std::getline(in, tag, '|')) {
            tag = trim(tag);
            if (!tag.empty()) c.condition_tags.push_back(tag);
        }
        s.handled = true;
    }
    s.b("occluder.enabled", c.occluder_enabled);
    s.d("occluder.cx_cm", c.occluder.cx_cm);
    s.d("occluder.cy_cm", c.occluder.cy_cm);
    s.d("occluder.width_cm", c.occluder.width_cm);
    s.d("occluder.height_cm", c.occluder.height_cm);
    s.d("occluder.standoff_cm", c.occluder.standoff_cm);

    s.i("geom.hidden_h", c.geometry.hidden_h);
    s.i("geom.hidden_w", c.geometry.hidden_w);
    s.i("geom.wall_h", c.geometry.wall_h);
    s.i("geom.wall_w", c.geometry.wall_w);
    s.d("geom.hidden_size_h_cm", c.geometry.hidden_size_h_cm);
    s.d("geom.hidden_size_w_cm", c.geometry.hidden_size_w_cm);
    s.d("geom.wall_size_h_cm", c.geometry.wall_size_h_cm);
    s.d("geom.wall_size_w_cm", c.geometry.wall_size_w_cm);
    s.u64("geom.seed", c.geometry.geometry_seed);

    s.i("gen.train_count", c.gen_train_count);
    s.i("gen.test_count", c.gen_test_count);
    s.i("gen.channels", c.channels);
    s.str("gen.source_dir", c.source_dir);

    if (!s.handled) throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

void TrainConfig::validate() const {
    arch.validate();
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (ae_epochs < 0 || joint_epochs < 0) throw ConfigError("config: epochs must be >= 0");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
    if (disc_steps_per_gen < 1) throw ConfigError("config: disc_steps_per_gen must be >= 1");
    if (!(weights.tau > 0.0)) throw ConfigError("config: loss.tau must be > 0");
    if (grad_clip < 0.0) throw ConfigError("config: grad_clip must be >= 0");
}

std::vector<ConditionSpec> TrainConfig::conditions() const {
    std::vector<ConditionSpec> out;
    std::optional<Occluder> occ;
    if (occluder_enabled) occ = occluder;
    for (std::size_t i = 0; i < condition_tags.size(); ++i)
        out.push_back(parse_condition_tag(static_cast<int>(i), condition_tags[i], occ));
    return out;
}

std::string TrainConfig::canonical_text() const {
    std::ostringstream o;
    o << "manifest=" << manifest_path << "\n";
    o << "out_dir=" << out_dir << "\n";
    o << "cache_dir=" << cache_dir << "\n";
    o << arch.canonical_text();
    o << flags.canonical_text();
    o << "loss.lambda1=" << fmt_double(weights.lambda1) << "\n";
    o << "loss.lambda2=" << fmt_double(weights.lambda2) << "\n";
    o << "loss.lambda_vq=" << fmt_double(weights.lambda_vq) << "\n";
    o << "loss.lambda_gan=" << fmt_double(weights.lambda_gan) << "\n";
    o << "loss.tau=" << fmt_double(weights.tau) << "\n";
    o << "loss.alpha=" << fmt_double(weights.alpha) << "\n";
    o << "loss.beta=" << fmt_double(weights.beta) << "\n";
    o << "ae.epochs=" << ae_epochs << "\n";
    o << "ae.lr_start=" << fmt_double(ae_lr_start) << "\n";
    o << "ae.lr_end=" << fmt_double(ae_lr_end) << "\n";
    o << "ae.beta1=" << fmt_double(ae_beta1) << "\n";
    o << "ae.beta2=" << fmt_double(ae_beta2) << "\n";
    o << "ae.weight_decay=" << fmt_double(ae_weight_decay) << "\n";
    o << "joint.epochs=" << joint_epochs << "\n";
    o << "joint.lr_start=" << fmt_double(joint_lr_start) << "\n";
    o << "joint.lr_end=" << fmt_double(joint_lr_end) << "\n";
    o << "joint.beta1=" << fmt_double(joint_beta1) << "\n";
    o << "joint.beta2=" << fmt_double(joint_beta2) << "\n";
    o << "joint.weight_decay=" << fmt_double(joint_weight_decay) << "\n";
    o << "batch_size=" << batch_size << "\n";
    o << "seed=" << seed << "\n";
    o << "freeze_decoder=" << freeze_decoder << "\n";
    o << "grad_clip=" << fmt_double(grad_clip) << "\n";
    o << "disc_steps_per_gen=" << disc_steps_per_gen << "\n";
    std::string tags;
    for (std::size_t i = 0; i < condition_tags.size(); ++i) {
        if (i) tags += "|";
        tags += condition_tags[i];
    }
    o << "conditions=" << tags << "\n";
    o << "occluder.enabled=" << occluder_enabled << "\n";
    o << "occluder.cx_cm=" << fmt_double(occluder.cx_cm) << "\n";
    o << "occluder.cy_cm=" << fmt_double(occluder.cy_cm) << "\n";
    o << "occluder.width_cm=" << fmt_double(occluder.width_cm) << "\n";
    o << "occluder.height_cm=" << fmt_double(occluder.height_cm) << "\n";
    o << "occluder.standoff_cm=" << fmt_double(occluder.standoff_cm) << "\n";
    o << nlosim::canonical_text(geometry);
    o << "gen.train_count=" << gen_train_count << "\n";
    o << "gen.test_count=" << gen_test_count << "\n";
    o << "gen.channels=" << channels << "\n";
    o << "gen.source_dir=" << source_dir << "\n";
    return o.str();
}

std::uint64_t TrainConfig::config_hash() const { return fnv1a64(canonical_text()); }

TrainConfig parse_config_lines(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    for (const auto& [k, v] : kv) apply_kv(c, k, v);
    return c;
}

TrainConfig load_config(const std::filesystem::path& file) {
    std::map<std::string, std::string> kv;
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw IoError("config: cannot open " + file.string());
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
            kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
        }
    }
    // Environment overrides: NLOSIM_<KEY> with dots as underscores,
    // e.g. NLOSIM_ARCH_STAGES=3 sets arch.stages.
    static const char* known_keys[] = {
        "manifest", "out_dir", "cache_dir",
        "arch.img_h", "arch.img_w", "arch.img_c", "arch.stages", "arch.base_width",
        "arch.width_cap", "arch.latent_channels", "arch.n_d", "arch.cond_width",
        "arch.cond_map_width", "arch.disc_width", "arch.percep_width", "arch.ltm_spatial",
        "ablate.no_ot", "ablate.no_joint", "ablate.single_scale_modulation",
        "ablate.concat_modulation", "ablate.no_vq", "ablate.no_modulation",
        "loss.lambda1", "loss.lambda2", "loss.lambda_vq", "loss.lambda_gan", "loss.tau",
        "loss.alpha", "loss.beta",
        "ae.epochs", "ae.lr_start", "ae.lr_end", "ae.beta1", "ae.beta2", "ae.weight_decay",
        "joint.epochs", "joint.lr_start", "joint.lr_end", "joint.beta1", "joint.beta2",
        "joint.weight_decay",
        "batch_size", "seed", "freeze_decoder", "grad_clip", "disc_steps_per_gen", "threads",
        "conditions", "occluder.enabled", "occluder.cx_cm", "occluder.cy_cm",
        "occluder.width_cm", "occluder.height_cm", "occluder.standoff_cm",
        "geom.hidden_h", "geom.hidden_w", "geom.wall_h", "geom.wall_w",
        "geom.hidden_size_h_cm", "geom.hidden_size_w_cm", "geom.wall_size_h_cm",
        "geom.wall_size_w_cm", "geom.seed",
        "gen.train_count", "gen.test_count", "gen.channels", "gen.source_dir",
    };
    for (const char* key : known_keys) {
        std::string env_name = "NLOSIM_";
        for (const char* p = key; *p; ++p)
            env_name += *p == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
        if (const char* val = std::getenv(env_name.c_str())) kv[key] = val;
    }
    TrainConfig c = parse_config_lines(kv);
    return c;
}

}  // namespace nlosim::training
