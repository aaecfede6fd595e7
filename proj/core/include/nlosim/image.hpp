#pragma once

#include <filesystem>
#include <vector>

namespace nlosim {

/// Dense H x W x C image, values nominally in [0,1]. Row-major, channel
/// interleaved: index(y,x,ch) = (y*w + x)*c + ch. C is 1 (gray) or 3 (RGB).
struct ImageGrid {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> v;

    ImageGrid() = default;
    ImageGrid(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, 0.0) {}

    static ImageGrid constant(int h, int w, int c, double value);

    std::size_t size() const { return v.size(); }
    double& at(int y, int x, int ch) { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }

    bool same_shape(const ImageGrid& o) const { return h == o.h && w == o.w && c == o.c; }
    bool finite() const;

    /// Clamps every value into [0,1].
    void clip01();

    /// Channel-mean grayscale copy (identity for c == 1).
    ImageGrid to_gray() const;
};

/// Lossless 16-bit-per-channel PNG. The dataset layout names these *.png16;
/// the payload is an ordinary PNG with bit depth 16, gray or RGB.
/// Values are quantized as round(clamp(v,0,1) * 65535).
void save_png16(const std::filesystem::path& path, const ImageGrid& img);
ImageGrid load_png16(const std::filesystem::path& path);

/// Exact quantized value a save/load round-trip produces for v in [0,1].
inline double png16_quantize(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    auto q = static_cast<unsigned>(v * 65535.0 + 0.5);
    return static_cast<double>(q) / 65535.0;
}

}  // namespace nlosim
