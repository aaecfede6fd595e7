#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nlosim/common.hpp"
#include "nlosim/nn/params.hpp"

namespace testutil {

/// Scratch directory under the system temp root, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("nlosim_" + tag + "_" + std::to_string(::getpid()) + "_" +
                nlosim::hex64(nlosim::fnv1a64(tag)));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

/// Indices of the `k` largest-|g| coordinates; the signal-bearing subset.
/// Near-zero-gradient coordinates measure only float forward noise and say
/// nothing about backward correctness.
inline std::vector<std::size_t> top_coords(const std::vector<float>& g, int k) {
    std::vector<std::size_t> idx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) idx[i] = i;
    std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), g.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                      [&g](std::size_t a, std::size_t b) {
                          return std::abs(g[a]) > std::abs(g[b]);
                      });
    idx.resize(keep);
    return idx;
}

/// Aggregate relative error between analytic parameter gradients and central
/// finite differences: ||fd - g||_2 / max(||g||_2, 1e-12), over the top
/// `max_coords` coordinates of each parameter by gradient magnitude.
///
/// `loss_value` evaluates the scalar objective at the store's current
/// values; `analytic` fills a zeroed GradBuffer via a tracked tape.
inline double fd_check_params(nlosim::nn::ParamStore& store,
                              const std::vector<nlosim::nn::ParamId>& ids,
                              const std::function<double()>& loss_value,
                              const std::function<void(nlosim::nn::GradBuffer&)>& analytic,
                              double h = 1e-2, int max_coords = 64) {
    nlosim::nn::GradBuffer grads(store);
    analytic(grads);

    double num = 0.0, den = 0.0;
    for (auto id : ids) {
        auto& values = store.value(id).v;
        const auto& g = grads.grad(id);
        for (std::size_t k : top_coords(g, max_coords)) {
            if (g[k] == 0.0f) continue;
            float saved = values[k];
            values[k] = static_cast<float>(saved + h);
            double fp = loss_value();
            values[k] = static_cast<float>(saved - h);
            double fm = loss_value();
            values[k] = saved;
            double fd = (fp - fm) / (2.0 * h);
            double diff = fd - static_cast<double>(g[k]);
            num += diff * diff;
            den += static_cast<double>(g[k]) * g[k];
        }
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

/// Same aggregate check for gradients w.r.t. an input tensor. `loss_value`
/// must read the tensor by reference.
inline double fd_check_input(std::vector<float>& input, const std::vector<float>& analytic_grad,
                             const std::function<double()>& loss_value, double h = 1e-2,
                             int max_coords = 128) {
    double num = 0.0, den = 0.0;
    for (std::size_t k : top_coords(analytic_grad, max_coords)) {
        float saved = input[k];
        input[k] = static_cast<float>(saved + h);
        double fp = loss_value();
        input[k] = static_cast<float>(saved - h);
        double fm = loss_value();
        input[k] = saved;
        double fd = (fp - fm) / (2.0 * h);
        double diff = fd - static_cast<double>(analytic_grad[k]);
        num += diff * diff;
        den += static_cast<double>(analytic_grad[k]) * analytic_grad[k];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

inline nlosim::nn::Tensor random_tensor(int h, int w, int c, std::uint64_t seed, double lo = -1.0,
                                        double hi = 1.0) {
    nlosim::nn::Tensor t(h, w, c);
    nlosim::Rng rng(seed);
    for (auto& v : t.v) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

}  // namespace testutil
