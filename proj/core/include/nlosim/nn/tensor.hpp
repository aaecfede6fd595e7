#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nlosim/image.hpp"

namespace nlosim::nn {

using real_t = float;

/// Dense H x W x C float buffer, row-major channel-interleaved like
/// ImageGrid. Vectors use shape (1,1,n); matrices (rows, cols, 1).
struct Tensor {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<real_t> v;

    Tensor() = default;
    Tensor(int h_, int w_, int c_)
        : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, real_t(0)) {}

    static Tensor vec(int n) { return Tensor(1, 1, n); }
    static Tensor matrix(int rows, int cols) { return Tensor(rows, cols, 1); }

    std::size_t size() const { return v.size(); }
    int pixels() const { return h * w; }
    real_t& at(int y, int x, int ch) { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    real_t at(int y, int x, int ch) const { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    real_t& m(int r, int col) { return v[static_cast<std::size_t>(r) * w + col]; }
    real_t m(int r, int col) const { return v[static_cast<std::size_t>(r) * w + col]; }

    bool same_shape(const Tensor& o) const { return h == o.h && w == o.w && c == o.c; }
    std::string shape_str() const;
    bool finite() const;
    void fill(real_t x) { std::fill(v.begin(), v.end(), x); }
};

Tensor from_image(const ImageGrid& img);
ImageGrid to_image(const Tensor& t);

}  // namespace nlosim::nn
