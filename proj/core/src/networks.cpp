#include "nlosim/networks.hpp"

#include <algorithm>
#include <sstream>

namespace nlosim::networks {

namespace {

int int_of(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("arch text missing key " + key);
    return std::stoi(it->second);
}

std::map<std::string, std::string> kv_of(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace

std::string AblationFlags::canonical_text() const {
    std::ostringstream out;
    out << "flags.no_ot=" << no_ot << "\n";
    out << "flags.no_joint=" << no_joint << "\n";
    out << "flags.single_scale_modulation=" << single_scale_modulation << "\n";
    out << "flags.concat_modulation=" << concat_modulation << "\n";
    out << "flags.no_vq=" << no_vq << "\n";
    out << "flags.no_modulation=" << no_modulation << "\n";
    return out.str();
}

void ArchConfig::validate() const {
    if (img_h < 4 || img_w < 4) throw ConfigError("arch: image too small");
    if (img_c != 1 && img_c != 3) throw ConfigError("arch: img_c must be 1 or 3");
    if (stages < 1 || stages > 6) throw ConfigError("arch: stages must be in [1,6]");
    if ((img_h % (1 << stages)) != 0 || (img_w % (1 << stages)) != 0)
        throw ConfigError("arch: image size must be divisible by 2^stages");
    if (base_width < 1 || latent_channels < 1 || n_d < 1 || cond_width < 1 ||
        cond_map_width < 1 || disc_width < 1 || percep_width < 1)
        throw ConfigError("arch: widths must be >= 1");
    // E_c always downsamples four times.
    if ((img_h % 16) != 0 || (img_w % 16) != 0)
        throw ConfigError("arch: image size must be divisible by 16 for the condition encoder");
}

int ArchConfig::width_at(int k) const { return std::min(base_width << k, width_cap); }

std::array<int, 3> ArchConfig::latent_shape() const {
    return {img_h >> stages, img_w >> stages, latent_channels};
}

std::string ArchConfig::canonical_text() const {
    std::ostringstream out;
    out << "arch.img_h=" << img_h << "\n";
    out << "arch.img_w=" << img_w << "\n";
    out << "arch.img_c=" << img_c << "\n";
    out << "arch.stages=" << stages << "\n";
    out << "arch.base_width=" << base_width << "\n";
    out << "arch.width_cap=" << width_cap << "\n";
    out << "arch.latent_channels=" << latent_channels << "\n";
    out << "arch.n_d=" << n_d << "\n";
    out << "arch.cond_width=" << cond_width << "\n";
    out << "arch.cond_map_width=" << cond_map_width << "\n";
    out << "arch.disc_width=" << disc_width << "\n";
    out << "arch.percep_width=" << percep_width << "\n";
    out << "arch.ltm_spatial=" << (ltm_spatial ? 1 : 0) << "\n";
    return out.str();
}

ArchConfig ArchConfig::parse_text(const std::string& text) {
    auto kv = kv_of(text);
    ArchConfig a;
    a.img_h = int_of(kv, "arch.img_h");
    a.img_w = int_of(kv, "arch.img_w");
    a.img_c = int_of(kv, "arch.img_c");
    a.stages = int_of(kv, "arch.stages");
    a.base_width = int_of(kv, "arch.base_width");
    a.width_cap = int_of(kv, "arch.width_cap");
    a.latent_channels = int_of(kv, "arch.latent_channels");
    a.n_d = int_of(kv, "arch.n_d");
    a.cond_width = int_of(kv, "arch.cond_width");
    a.cond_map_width = int_of(kv, "arch.cond_map_width");
    a.disc_width = int_of(kv, "arch.disc_width");
    a.percep_width = int_of(kv, "arch.percep_width");
    a.ltm_spatial = int_of(kv, "arch.ltm_spatial") != 0;
    return a;
}

// ---------------------------------------------------------------- plain nets

Encoder Encoder::create(ParamStore& store, const std::string& prefix, const ArchConfig& a,
                        std::uint64_t seed) {
    Encoder e;
    e.stem = nn::Conv::create(store, prefix + ".stem", a.img_c, a.width_at(0), 3, 1, 1, seed);
    for (int k = 1; k <= a.stages; ++k) {
        EncoderStage st;
        st.down = nn::Conv::create(store, prefix + ".down" + std::to_string(k), a.width_at(k - 1),
                                   a.width_at(k), 3, 2, 1, seed);
        st.conv = nn::Conv::create(store, prefix + ".conv" + std::to_string(k), a.width_at(k),
                                   a.width_at(k), 3, 1, 1, seed);
        e.stages.push_back(st);
    }
    e.to_latent = nn::Conv::create(store, prefix + ".latent", a.width_at(a.stages),
                                   a.latent_channels, 3, 1, 1, seed);
    return e;
}

Var Encoder::forward(Tape& t, Var x, std::vector<Var>* features) const {
    Var h = t.leaky_relu(stem(t, x), nn::kLeakySlope);
    for (std::size_t k = 0; k < stages.size(); ++k) {
        if (features && k < stages.size()) features->push_back(h);
        h = t.leaky_relu(stages[k].down(t, h), nn::kLeakySlope);
        h = t.leaky_relu(stages[k].conv(t, h), nn::kLeakySlope);
    }
    return to_latent(t, h);
}

Decoder Decoder::create(ParamStore& store, const std::string& prefix, const ArchConfig& a,
                        std::uint64_t seed) {
    Decoder d;
    d.from_latent = nn::Conv::create(store, prefix + ".latent", a.latent_channels,
                                     a.width_at(a.stages), 3, 1, 1, seed);
    for (int j = a.stages - 1; j >= 0; --j) {
        DecoderStage st;
        st.conv1 = nn::Conv::create(store, prefix + ".up" + std::to_string(j), a.width_at(j + 1),
                                    a.width_at(j), 3, 1, 1, seed);
        st.conv2 = nn::Conv::create(store, prefix + ".conv" + std::to_string(j), a.width_at(j),
                                    a.width_at(j), 3, 1, 1, seed);
        d.stages.push_back(st);
    }
    d.to_img = nn::Conv::create(store, prefix + ".out", a.width_at(0), a.img_c, 3, 1, 1, seed);
    return d;
}

Var Decoder::forward(Tape& t, Var latent) const {
    Var h = t.leaky_relu(from_latent(t, latent), nn::kLeakySlope);
    for (const auto& st : stages) {
        h = t.upsample_nn2(h);
        h = t.leaky_relu(st.conv1(t, h), nn::kLeakySlope);
        h = t.leaky_relu(st.conv2(t, h), nn::kLeakySlope);
    }
    return t.sigmoid(to_img(t, h));
}

Autoencoder Autoencoder::create(ParamStore& store, const ArchConfig& a, std::uint64_t seed) {
    Autoencoder ae;
    ae.eh = Encoder::create(store, "eh", a, seed);
    ae.dh = Decoder::create(store, "dh", a, seed);
    return ae;
}

AeOut autoencoder_forward(Tape& t, const Autoencoder& ae, Var x) {
    Var latent = ae.eh.forward(t, x);
    return AeOut{latent, ae.dh.forward(t, latent)};
}

// ------------------------------------------------------- modulated networks

ModPlan ModPlan::from_flags(const AblationFlags& f) {
    ModPlan p;
    p.enabled = !f.no_modulation;
    p.concat_kind = f.concat_modulation;
    p.deepest_only = f.single_scale_modulation;
    return p;
}

ConcatModBlock ConcatModBlock::create(ParamStore& store, const std::string& name, int map_channels,
                                      int feature_channels, std::uint64_t seed) {
    ConcatModBlock b;
    b.a = nn::Conv::create(store, name + ".a", map_channels + feature_channels, feature_channels, 3,
                           1, 1, seed);
    b.b = nn::Conv::create(store, name + ".b", feature_channels, feature_channels, 3, 1, 1, seed);
    b.feature_channels = feature_channels;
    return b;
}

Var ConcatModBlock::apply(Tape& t, Var f, Var o) const {
    const auto& tf = t.val(f);
    Var o_resized = t.resize_nn(o, tf.h, tf.w);
    Var h = t.leaky_relu(a(t, t.concat_c(f, o_resized)), nn::kLeakySlope);
    h = b(t, h);
    return t.add(f, h);  // residual
}

RecEncoder RecEncoder::create(ParamStore& store, const std::string& prefix, const ArchConfig& a,
                              const ModPlan& plan, std::uint64_t seed) {
    RecEncoder e;
    e.plan = plan;
    e.stem = nn::Conv::create(store, prefix + ".stem", a.img_c, a.width_at(0), 3, 1, 1, seed);
    for (int k = 1; k <= a.stages; ++k) {
        int cin = a.width_at(k - 1);
        // LTM injection at the previous site doubles the incoming channels.
        if (plan.active_at(k - 1, a.stages) && !plan.concat_kind) cin *= 2;
        EncoderStage st;
        st.down = nn::Conv::create(store, prefix + ".down" + std::to_string(k), cin, a.width_at(k),
                                   3, 2, 1, seed);
        st.conv = nn::Conv::create(store, prefix + ".conv" + std::to_string(k), a.width_at(k),
                                   a.width_at(k), 3, 1, 1, seed);
        e.stages.push_back(st);
    }
    e.to_latent = nn::Conv::create(store, prefix + ".latent", a.width_at(a.stages),
                                   a.latent_channels, 3, 1, 1, seed);
    return e;
}

Reprojector Reprojector::create(ParamStore& store, const std::string& prefix, const ArchConfig& a,
                                const ModPlan& plan, std::uint64_t seed) {
    Reprojector r;
    r.plan = plan;
    r.enc = Encoder::create(store, prefix + ".enc", a, seed);
    for (int j = a.stages - 1; j >= 0; --j) {
        UNetDecoderStage st;
        // Deepest stage consumes the bottleneck directly.
        int cin = (j == a.stages - 1) ? a.latent_channels : a.width_at(j + 1);
        st.up_conv =
            nn::Conv::create(store, prefix + ".up" + std::to_string(j), cin, a.width_at(j), 3, 1, 1, seed);
        st.fuse = nn::Conv::create(store, prefix + ".fuse" + std::to_string(j), 2 * a.width_at(j),
                                   a.width_at(j), 3, 1, 1, seed);
        r.dec.push_back(st);
    }
    r.to_img = nn::Conv::create(store, prefix + ".out", a.width_at(0), a.img_c, 3, 1, 1, seed);
    return r;
}

Discriminator Discriminator::create(ParamStore& store, const std::string& prefix,
                                    const ArchConfig& a, std::uint64_t seed) {
    Discriminator d;
    d.wall_h = a.img_h;
    d.wall_w = a.img_w;
    for (int s = 0; s < 2; ++s) {
        Head h;
        std::string base = prefix + ".s" + std::to_string(s);
        h.c1 = nn::Conv::create(store, base + ".c1", 2 * a.img_c, a.disc_width, 3, 2, 1, seed);
        h.c2 = nn::Conv::create(store, base + ".c2", a.disc_width, 2 * a.disc_width, 3, 2, 1, seed);
        h.c3 = nn::Conv::create(store, base + ".c3", 2 * a.disc_width, 1, 3, 1, 1, seed);
        d.heads.push_back(h);
    }
    return d;
}

PerceptualNet PerceptualNet::create(ParamStore& store, const std::string& prefix,
                                    const ArchConfig& a, std::uint64_t seed) {
    PerceptualNet p;
    int cin = a.img_c;
    int w = a.percep_width;
    for (int s = 0; s < 3; ++s) {
        p.convs.push_back(
            nn::Conv::create(store, prefix + ".c" + std::to_string(s), cin, w, 3, 2, 1, seed));
        cin = w;
        w *= 2;
    }
    return p;
}

std::vector<Var> PerceptualNet::features(Tape& t, Var img) const {
    std::vector<Var> feats;
    Var h = img;
    for (const auto& c : convs) {
        h = t.leaky_relu(c(t, h), nn::kLeakySlope);
        feats.push_back(h);
    }
    return feats;
}

// ---------------------------------------------------------------- the bundle

std::unique_ptr<ModelBundle> build_model(const ArchConfig& arch, const AblationFlags& flags,
                                         int n_c, std::uint64_t seed) {
    arch.validate();
    auto m = std::make_unique<ModelBundle>();
    m->arch = arch;
    m->flags = flags;
    m->n_c = n_c;

    ModPlan plan = ModPlan::from_flags(flags);
    m->ae = Autoencoder::create(m->store, arch, seed);
    m->er = RecEncoder::create(m->store, "er", arch, plan, seed);

    m->has_cond = plan.enabled;
    if (m->has_cond) {
        m->ec = codebook::CondEncoder::create(m->store, "ec", arch.img_h, arch.img_w, arch.img_c,
                                              arch.cond_width, arch.n_d, seed);
        if (!flags.no_vq) {
            if (n_c < 1) throw ContractError("build_model: n_c must be >= 1 with a codebook");
            m->cb = codebook::Codebook::create(m->store, "codebook", n_c, arch.n_d, seed);
            m->has_vq = true;
        }
        std::vector<modulation::SiteSpec> sites_r, sites_p;
        std::vector<int> cmod_sites;
        for (int site = 0; site < arch.stages; ++site) {
            if (!plan.active_at(site, arch.stages)) continue;
            if (plan.concat_kind) {
                cmod_sites.push_back(site);
            } else {
                sites_r.push_back({site, arch.width_at(site)});
                sites_p.push_back({site, arch.width_at(site)});
            }
        }
        m->chain_r = modulation::ModulationChain::create(m->store, "chain_r", arch.n_d,
                                                         arch.cond_map_width, arch.stages, sites_r,
                                                         seed, arch.ltm_spatial);
        for (int site : cmod_sites)
            m->cmods_r.push_back(ConcatModBlock::create(m->store, "cmod_r.s" + std::to_string(site),
                                                        arch.cond_map_width, arch.width_at(site), seed));
        if (!flags.no_joint) {
            m->chain_p = modulation::ModulationChain::create(m->store, "chain_p", arch.n_d,
                                                             arch.cond_map_width, arch.stages,
                                                             sites_p, seed, arch.ltm_spatial);
            for (int site : cmod_sites)
                m->cmods_p.push_back(ConcatModBlock::create(
                    m->store, "cmod_p.s" + std::to_string(site), arch.cond_map_width,
                    arch.width_at(site), seed));
        }
    }

    m->has_joint = !flags.no_joint;
    if (m->has_joint) {
        m->gp = Reprojector::create(m->store, "gp", arch, plan, seed);
        m->disc = Discriminator::create(m->store, "disc", arch, seed);
        m->percep = PerceptualNet::create(m->store, "percep", arch, seed);
    }
    return m;
}

Var apply_injection(Tape& t, const ModelBundle& m, bool reconstruction_side, int site, Var f,
                    const std::vector<modulation::ScaleRep>& reps) {
    ModPlan plan = ModPlan::from_flags(m.flags);
    if (!plan.active_at(site, m.arch.stages)) return f;
    Var o = reps[static_cast<std::size_t>(site)].map;
    if (plan.concat_kind) {
        const auto& blocks = reconstruction_side ? m.cmods_r : m.cmods_p;
        // Blocks are stored in ascending site order; find ours.
        int pos = 0;
        for (int s = 0; s < site; ++s)
            if (plan.active_at(s, m.arch.stages)) ++pos;
        return blocks[static_cast<std::size_t>(pos)].apply(t, f, o);
    }
    const auto& chain = reconstruction_side ? m.chain_r : m.chain_p;
    const modulation::LtmBlock* block = chain.block_for(site);
    if (!block) throw ContractError("apply_injection: missing LTM block for site");
    if (reconstruction_side) return block->inject(t, f, o);
    return block->modulate(t, f, o);  // reprojection side modulates the skip
}

ReconOut reconstruct_forward(Tape& t, const ModelBundle& m, Var y, Var z) {
    ModPlan plan = ModPlan::from_flags(m.flags);
    std::vector<modulation::ScaleRep> reps;
    if (plan.enabled) {
        if (!z.valid()) throw ContractError("reconstruct_forward: condition code required");
        reps = m.chain_r.scale_reps(t, z);
    }
    Var h = t.leaky_relu(m.er.stem(t, y), nn::kLeakySlope);
    for (std::size_t k = 0; k < m.er.stages.size(); ++k) {
        if (plan.enabled) h = apply_injection(t, m, /*reconstruction_side=*/true,
                                              static_cast<int>(k), h, reps);
        h = t.leaky_relu(m.er.stages[k].down(t, h), nn::kLeakySlope);
        h = t.leaky_relu(m.er.stages[k].conv(t, h), nn::kLeakySlope);
    }
    Var latent = m.er.to_latent(t, h);
    Var x_prime = m.ae.dh.forward(t, latent);
    return ReconOut{x_prime, latent};
}

Var reproject_forward(Tape& t, const ModelBundle& m, Var x, Var z) {
    if (!m.has_joint) throw ContractError("reproject_forward: model built with no_joint");
    ModPlan plan = ModPlan::from_flags(m.flags);
    std::vector<modulation::ScaleRep> reps;
    if (plan.enabled) {
        if (!z.valid()) throw ContractError("reproject_forward: condition code required");
        reps = m.chain_p.scale_reps(t, z);
    }
    std::vector<Var> feats;
    Var latent = m.gp.enc.forward(t, x, &feats);

    // Modulated skips, consumed deep to shallow by the decoder.
    Var d = latent;
    for (std::size_t j = 0; j < m.gp.dec.size(); ++j) {
        int site = static_cast<int>(m.gp.dec.size()) - 1 - static_cast<int>(j);
        d = t.upsample_nn2(d);
        d = t.leaky_relu(m.gp.dec[j].up_conv(t, d), nn::kLeakySlope);
        Var skip = feats[static_cast<std::size_t>(site)];
        if (plan.enabled)
            skip = apply_injection(t, m, /*reconstruction_side=*/false, site, skip, reps);
        d = t.leaky_relu(m.gp.dec[j].fuse(t, t.concat_c(d, skip)), nn::kLeakySlope);
    }
    return t.sigmoid(m.gp.to_img(t, d));
}

std::vector<Var> discriminate_forward(Tape& t, const ModelBundle& m, Var x, Var y_like) {
    if (!m.has_joint) throw ContractError("discriminate_forward: model built with no_joint");
    const auto& ty = t.val(y_like);
    if (ty.h != m.disc.wall_h || ty.w != m.disc.wall_w)
        throw DimensionError("discriminate_forward: projection-like input has wrong resolution");
    Var xr = t.resize_nn(x, m.disc.wall_h, m.disc.wall_w);
    Var pair = t.concat_c(xr, y_like);
    std::vector<Var> scores;
    Var in = pair;
    for (std::size_t s = 0; s < m.disc.heads.size(); ++s) {
        if (s > 0) in = t.avgpool2(in);
        const auto& head = m.disc.heads[s];
        Var h = t.leaky_relu(head.c1(t, in), nn::kLeakySlope);
        h = t.leaky_relu(head.c2(t, h), nn::kLeakySlope);
        h = head.c3(t, h);
        scores.push_back(t.mean_all(h));
    }
    return scores;
}

// -------------------------------------------------------- eval conveniences

codebook::QuantizeResult infer_code(const ModelBundle& m, const ImageGrid& y) {
    codebook::QuantizeResult out;
    if (!m.has_cond) return out;
    codebook::LatentCondition l = m.ec.encode(m.store, y);
    if (m.has_vq) return codebook::quantize(l, m.store, m.cb, codebook::QuantizeMode::test);
    out.z_q = l.vector;
    out.index = -1;
    return out;
}

ImageGrid run_reconstruct(const ModelBundle& m, const ImageGrid& y) {
    auto code = infer_code(m, y);
    return run_reconstruct_with_code(m, y, code.z_q);
}

ImageGrid run_reconstruct_with_code(const ModelBundle& m, const ImageGrid& y, const Tensor& z) {
    Tape t(&m.store, /*track=*/false);
    Var yv = t.input(nn::from_image(y));
    Var zv = m.has_cond ? t.input(z) : Var{};
    auto out = reconstruct_forward(t, m, yv, zv);
    return nn::to_image(t.val(out.x_prime));
}

ImageGrid run_reproject(const ModelBundle& m, const ImageGrid& x, const Tensor& z) {
    Tape t(&m.store, /*track=*/false);
    Var xv = t.input(nn::from_image(x));
    Var zv = m.has_cond ? t.input(z) : Var{};
    Var y = reproject_forward(t, m, xv, zv);
    return nn::to_image(t.val(y));
}

ImageGrid run_autoencode(const ModelBundle& m, const ImageGrid& x) {
    Tape t(&m.store, /*track=*/false);
    auto out = autoencoder_forward(t, m.ae, t.input(nn::from_image(x)));
    return nn::to_image(t.val(out.xhat));
}

}  // namespace nlosim::networks
