#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nlosim/dataset.hpp"
#include "nlosim/image.hpp"
#include "nlosim/networks.hpp"

namespace nlosim::metrics {

/// 10*log10(peak^2 / MSE); identical images return +infinity (serialized as
/// the string "inf").
double psnr(const ImageGrid& a, const ImageGrid& b, double peak = 1.0);

/// Mean local SSIM, 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03,
/// dynamic range 1, valid positions only. RGB is reduced to the channel
/// mean first. Throws DimensionError when either side is below the window.
double ssim(const ImageGrid& a, const ImageGrid& b);

struct ConditionMetrics {
    int condition_id = 0;
    std::string name;
    double psnr_mean = 0.0;
    double ssim_mean = 0.0;
    int count = 0;
    std::optional<double> tikhonov_psnr_mean;
    std::optional<double> tikhonov_ssim_mean;
    std::optional<double> agnostic_psnr_mean;
    std::optional<double> agnostic_ssim_mean;
};

/// Per-condition evaluation in the layout of the paper-style comparison
/// tables: one row per condition plus overall means and optional baseline
/// columns (classical Tikhonov, condition-agnostic model).
struct MetricsReport {
    std::string split;
    std::uint64_t config_hash = 0;
    std::uint64_t checkpoint_id = 0;
    std::vector<ConditionMetrics> per_condition;
    double psnr_mean = 0.0;
    double ssim_mean = 0.0;
    int count = 0;
    std::optional<double> tikhonov_psnr_mean;
    std::optional<double> agnostic_psnr_mean;

    std::string to_json() const;
    std::string to_table() const;
};

struct EvalOptions {
    bool with_tikhonov = false;
    double tikhonov_reg = 1e-3;
    std::filesystem::path cache_dir;  // required with with_tikhonov
    const networks::ModelBundle* agnostic = nullptr;
    int threads = 1;
};

/// Runs the reconstruction path (E_c -> test-time quantize -> G_r) over
/// every record of the split and accumulates per-condition PSNR/SSIM.
/// The Tikhonov column requires cached transport matrices; a missing cache
/// entry is an error, never a silent skip.
MetricsReport evaluate(const networks::ModelBundle& m, const dataset::Manifest& manifest,
                       dataset::Split split, const EvalOptions& opt);

/// Assignment quality of the condition branch on a split: accuracy of
/// test-time quantization against the true labels plus the full confusion
/// matrix (rows = true condition, cols = assigned code).
struct CodebookStats {
    std::vector<std::vector<int>> confusion;
    std::vector<int> assignment_counts;  // per code
    double accuracy = 0.0;
    int count = 0;

    std::string to_json() const;
    std::string to_table() const;
};

CodebookStats codebook_stats(const networks::ModelBundle& m, const dataset::Manifest& manifest,
                             dataset::Split split);

}  // namespace nlosim::metrics
