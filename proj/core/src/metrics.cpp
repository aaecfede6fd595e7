#include "nlosim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nlosim/common.hpp"
#include "nlosim/lightsim.hpp"

namespace nlosim::metrics {

using ordered_json = nlohmann::ordered_json;

double psnr(const ImageGrid& a, const ImageGrid& b, double peak) {
    if (!a.same_shape(b)) throw DimensionError("psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        double d = a.v[i] - b.v[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.v.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size) * size);
    int half = size / 2;
    double sum = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double dy = y - half, dx = x - half;
            double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            w[static_cast<std::size_t>(y) * size + x] = v;
            sum += v;
        }
    for (auto& v : w) v /= sum;
    return w;
}

std::string json_double(double v) {
    if (std::isinf(v)) return "\"inf\"";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

double ssim(const ImageGrid& a_in, const ImageGrid& b_in) {
    if (!a_in.same_shape(b_in)) throw DimensionError("ssim: shape mismatch");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2, L = 1
    constexpr double kC2 = 0.03 * 0.03;
    if (a_in.h < kWin || a_in.w < kWin)
        throw DimensionError("ssim: image smaller than the 11x11 window");

    ImageGrid a = a_in.to_gray();
    ImageGrid b = b_in.to_gray();
    static const std::vector<double> win = gaussian_window(kWin, kSigma);

    double total = 0.0;
    int positions = 0;
    for (int y = 0; y + kWin <= a.h; ++y)
        for (int x = 0; x + kWin <= a.w; ++x) {
            double mu1 = 0, mu2 = 0, s11 = 0, s22 = 0, s12 = 0;
            for (int wy = 0; wy < kWin; ++wy)
                for (int wx = 0; wx < kWin; ++wx) {
                    double wgt = win[static_cast<std::size_t>(wy) * kWin + wx];
                    double va = a.at(y + wy, x + wx, 0);
                    double vb = b.at(y + wy, x + wx, 0);
                    mu1 += wgt * va;
                    mu2 += wgt * vb;
                    s11 += wgt * va * va;
                    s22 += wgt * vb * vb;
                    s12 += wgt * va * vb;
                }
            double var1 = s11 - mu1 * mu1;
            double var2 = s22 - mu2 * mu2;
            double cov = s12 - mu1 * mu2;
            double num = (2.0 * mu1 * mu2 + kC1) * (2.0 * cov + kC2);
            double den = (mu1 * mu1 + mu2 * mu2 + kC1) * (var1 + var2 + kC2);
            total += num / den;
            ++positions;
        }
    return total / positions;
}

std::string MetricsReport::to_json() const {
    ordered_json j;
    j["split"] = split;
    j["config_hash"] = hex64(config_hash);
    j["checkpoint_id"] = hex64(checkpoint_id);
    j["count"] = count;
    j["psnr_mean"] = std::isinf(psnr_mean) ? ordered_json("inf") : ordered_json(psnr_mean);
    j["ssim_mean"] = ssim_mean;
    if (tikhonov_psnr_mean) j["tikhonov_psnr_mean"] = *tikhonov_psnr_mean;
    if (agnostic_psnr_mean) j["agnostic_psnr_mean"] = *agnostic_psnr_mean;
    j["per_condition"] = ordered_json::array();
    for (const auto& c : per_condition) {
        ordered_json jc;
        jc["condition_id"] = c.condition_id;
        jc["name"] = c.name;
        jc["count"] = c.count;
        jc["psnr_mean"] = std::isinf(c.psnr_mean) ? ordered_json("inf") : ordered_json(c.psnr_mean);
        jc["ssim_mean"] = c.ssim_mean;
        if (c.tikhonov_psnr_mean) jc["tikhonov_psnr_mean"] = *c.tikhonov_psnr_mean;
        if (c.tikhonov_ssim_mean) jc["tikhonov_ssim_mean"] = *c.tikhonov_ssim_mean;
        if (c.agnostic_psnr_mean) jc["agnostic_psnr_mean"] = *c.agnostic_psnr_mean;
        if (c.agnostic_ssim_mean) jc["agnostic_ssim_mean"] = *c.agnostic_ssim_mean;
        j["per_condition"].push_back(jc);
    }
    return j.dump(2);
}

std::string MetricsReport::to_table() const {
    std::ostringstream o;
    bool tik = false, agn = false;
    for (const auto& c : per_condition) {
        tik = tik || c.tikhonov_psnr_mean.has_value();
        agn = agn || c.agnostic_psnr_mean.has_value();
    }
    char line[256];
    std::snprintf(line, sizeof(line), "%-14s %6s %9s %7s", "condition", "count", "PSNR", "SSIM");
    o << line;
    if (tik) o << "   tikPSNR  tikSSIM";
    if (agn) o << "   agnPSNR  agnSSIM";
    o << "\n";
    auto fmt = [](double v) {
        char b[24];
        if (std::isinf(v))
            std::snprintf(b, sizeof(b), "%9s", "inf");
        else
            std::snprintf(b, sizeof(b), "%9.3f", v);
        return std::string(b);
    };
    for (const auto& c : per_condition) {
        std::snprintf(line, sizeof(line), "%-14s %6d", c.name.c_str(), c.count);
        o << line << fmt(c.psnr_mean) << "  " << fmt(c.ssim_mean).substr(2);
        if (tik)
            o << " " << fmt(c.tikhonov_psnr_mean.value_or(0)) << " "
              << fmt(c.tikhonov_ssim_mean.value_or(0)).substr(1);
        if (agn)
            o << " " << fmt(c.agnostic_psnr_mean.value_or(0)) << " "
              << fmt(c.agnostic_ssim_mean.value_or(0)).substr(1);
        o << "\n";
    }
    std::snprintf(line, sizeof(line), "%-14s %6d", "overall", count);
    o << line << fmt(psnr_mean) << "  " << fmt(ssim_mean).substr(2);
    if (tik) o << " " << fmt(tikhonov_psnr_mean.value_or(0)) << "         ";
    if (agn) o << " " << fmt(agnostic_psnr_mean.value_or(0)) << "         ";
    o << "\n";
    return o.str();
}

MetricsReport evaluate(const networks::ModelBundle& m, const dataset::Manifest& manifest,
                       dataset::Split split, const EvalOptions& opt) {
    if (manifest.hidden_h != m.arch.img_h || manifest.hidden_w != m.arch.img_w ||
        manifest.channels != m.arch.img_c)
        throw DimensionError("evaluate: checkpoint architecture does not match manifest resolutions");

    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        if (manifest.records[i].split == split) idx.push_back(i);
    if (idx.empty()) throw DataError("evaluate: empty split");

    // Tikhonov baseline needs one cached matrix per condition, up front.
    std::vector<lightsim::TransportMatrix> transports;
    if (opt.with_tikhonov) {
        if (!manifest.geometry)
            throw IoError("evaluate: baseline requested but the manifest carries no geometry");
        for (const auto& cond : manifest.conditions) {
            auto path = lightsim::transport_cache_path(opt.cache_dir, cond, *manifest.geometry);
            if (!std::filesystem::exists(path))
                throw IoError("evaluate: missing cached transport matrix for condition " +
                              cond.short_name() + " at " + path.string());
            transports.push_back(lightsim::load_transport(path));
        }
    }

    struct Row {
        double psnr_v, ssim_v;
        double tik_psnr = 0, tik_ssim = 0;
        double agn_psnr = 0, agn_ssim = 0;
    };
    std::vector<Row> rows(idx.size());
    parallel_for(static_cast<int>(idx.size()), opt.threads, [&](int k) {
        const auto& rec = manifest.records[idx[static_cast<std::size_t>(k)]];
        ImageGrid x = load_png16(manifest.resolve(rec.hidden_path));
        ImageGrid y = load_png16(manifest.resolve(rec.projection_path));
        ImageGrid xp = networks::run_reconstruct(m, y);
        Row& r = rows[static_cast<std::size_t>(k)];
        r.psnr_v = psnr(xp, x);
        r.ssim_v = ssim(xp, x);
        if (opt.with_tikhonov) {
            ImageGrid xt = lightsim::classical_reconstruct(
                transports[static_cast<std::size_t>(rec.condition_id)], y, opt.tikhonov_reg);
            r.tik_psnr = psnr(xt, x);
            r.tik_ssim = ssim(xt, x);
        }
        if (opt.agnostic) {
            ImageGrid xa = networks::run_reconstruct(*opt.agnostic, y);
            r.agn_psnr = psnr(xa, x);
            r.agn_ssim = ssim(xa, x);
        }
    });

    MetricsReport rep;
    rep.split = dataset::split_name(split);
    rep.checkpoint_id = m.store.content_hash();
    rep.per_condition.resize(manifest.conditions.size());
    for (std::size_t c = 0; c < manifest.conditions.size(); ++c) {
        rep.per_condition[c].condition_id = static_cast<int>(c);
        rep.per_condition[c].name = manifest.conditions[c].short_name();
    }
    std::vector<double> tik_sum(manifest.conditions.size(), 0.0),
        tik_ssim_sum(manifest.conditions.size(), 0.0), agn_sum(manifest.conditions.size(), 0.0),
        agn_ssim_sum(manifest.conditions.size(), 0.0);
    double psnr_total = 0.0, ssim_total = 0.0, tik_total = 0.0, agn_total = 0.0;
    std::vector<double> psnr_sum(manifest.conditions.size(), 0.0),
        ssim_sum(manifest.conditions.size(), 0.0);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& rec = manifest.records[idx[k]];
        auto c = static_cast<std::size_t>(rec.condition_id);
        rep.per_condition[c].count += 1;
        psnr_sum[c] += rows[k].psnr_v;
        ssim_sum[c] += rows[k].ssim_v;
        psnr_total += rows[k].psnr_v;
        ssim_total += rows[k].ssim_v;
        if (opt.with_tikhonov) {
            tik_sum[c] += rows[k].tik_psnr;
            tik_ssim_sum[c] += rows[k].tik_ssim;
            tik_total += rows[k].tik_psnr;
        }
        if (opt.agnostic) {
            agn_sum[c] += rows[k].agn_psnr;
            agn_ssim_sum[c] += rows[k].agn_ssim;
            agn_total += rows[k].agn_psnr;
        }
    }
    rep.count = static_cast<int>(idx.size());
    rep.psnr_mean = psnr_total / rep.count;
    rep.ssim_mean = ssim_total / rep.count;
    if (opt.with_tikhonov) rep.tikhonov_psnr_mean = tik_total / rep.count;
    if (opt.agnostic) rep.agnostic_psnr_mean = agn_total / rep.count;
    for (std::size_t c = 0; c < manifest.conditions.size(); ++c) {
        auto& pc = rep.per_condition[c];
        if (pc.count == 0) continue;
        pc.psnr_mean = psnr_sum[c] / pc.count;
        pc.ssim_mean = ssim_sum[c] / pc.count;
        if (opt.with_tikhonov) {
            pc.tikhonov_psnr_mean = tik_sum[c] / pc.count;
            pc.tikhonov_ssim_mean = tik_ssim_sum[c] / pc.count;
        }
        if (opt.agnostic) {
            pc.agnostic_psnr_mean = agn_sum[c] / pc.count;
            pc.agnostic_ssim_mean = agn_ssim_sum[c] / pc.count;
        }
    }
    return rep;
}

std::string CodebookStats::to_json() const {
    ordered_json j;
    j["accuracy"] = accuracy;
    j["count"] = count;
    j["assignment_counts"] = assignment_counts;
    j["confusion"] = confusion;
    return j.dump(2);
}

std::string CodebookStats::to_table() const {
    std::ostringstream o;
    o << "confusion matrix (rows = true condition, cols = assigned code)\n";
    for (std::size_t r = 0; r < confusion.size(); ++r) {
        char head[32];
        std::snprintf(head, sizeof(head), "cond %2zu |", r);
        o << head;
        for (int v : confusion[r]) {
            char cell[16];
            std::snprintf(cell, sizeof(cell), " %5d", v);
            o << cell;
        }
        o << "\n";
    }
    char tail[64];
    std::snprintf(tail, sizeof(tail), "accuracy: %.4f over %d samples\n", accuracy, count);
    o << tail;
    return o.str();
}

CodebookStats codebook_stats(const networks::ModelBundle& m, const dataset::Manifest& manifest,
                             dataset::Split split) {
    if (!m.has_cond || !m.has_vq)
        throw ContractError("codebook_stats: model has no codebook (no_vq or no_modulation)");
    CodebookStats st;
    int n_c = m.cb.n_c;
    st.confusion.assign(static_cast<std::size_t>(manifest.n_conditions()),
                        std::vector<int>(static_cast<std::size_t>(n_c), 0));
    st.assignment_counts.assign(static_cast<std::size_t>(n_c), 0);
    int correct = 0;
    for (const auto& rec : manifest.records) {
        if (rec.split != split) continue;
        ImageGrid y = load_png16(manifest.resolve(rec.projection_path));
        auto code = networks::infer_code(m, y);
        st.confusion[static_cast<std::size_t>(rec.condition_id)]
                    [static_cast<std::size_t>(code.index)] += 1;
        st.assignment_counts[static_cast<std::size_t>(code.index)] += 1;
        if (code.index == rec.condition_id) ++correct;
        ++st.count;
    }
    if (st.count == 0) throw DataError("codebook_stats: empty split");
    st.accuracy = static_cast<double>(correct) / st.count;
    return st;
}

}  // namespace nlosim::metrics
