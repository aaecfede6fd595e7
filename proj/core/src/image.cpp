#include "nlosim/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "nlosim/common.hpp"

namespace nlosim {

ImageGrid ImageGrid::constant(int h, int w, int c, double value) {
    ImageGrid img(h, w, c);
    for (auto& x : img.v) x = value;
    return img;
}

bool ImageGrid::finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

void ImageGrid::clip01() {
    for (auto& x : v) {
        if (x < 0.0) x = 0.0;
        if (x > 1.0) x = 1.0;
    }
}

ImageGrid ImageGrid::to_gray() const {
    if (c == 1) return *this;
    ImageGrid g(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int ch = 0; ch < c; ++ch) s += at(y, x, ch);
            g.at(y, x, 0) = s / c;
        }
    return g;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void save_png16(const std::filesystem::path& path, const ImageGrid& img) {
    if (img.h <= 0 || img.w <= 0 || (img.c != 1 && img.c != 3))
        throw DimensionError("save_png16: image must be HxWx1 or HxWx3, got c=" + std::to_string(img.c));

    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("save_png16: cannot open " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("save_png16: png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("save_png16: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("save_png16: libpng failure writing " + path.string());
    }
    png_init_io(png, fp.get());
    int color = img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 16,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Fixed filter + compression settings keep output byte-stable.
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_compression_level(png, 6);
    png_write_info(png, info);

    std::vector<png_uint_16> row(static_cast<std::size_t>(img.w) * img.c);
    std::vector<png_byte> rowbytes(row.size() * 2);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                double v = img.at(y, x, ch);
                if (v < 0.0) v = 0.0;
                if (v > 1.0) v = 1.0;
                row[static_cast<std::size_t>(x) * img.c + ch] =
                    static_cast<png_uint_16>(v * 65535.0 + 0.5);
            }
        // PNG wants network byte order.
        for (std::size_t i = 0; i < row.size(); ++i) {
            rowbytes[2 * i] = static_cast<png_byte>(row[i] >> 8);
            rowbytes[2 * i + 1] = static_cast<png_byte>(row[i] & 0xff);
        }
        png_write_row(png, rowbytes.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageGrid load_png16(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("load_png16: cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("load_png16: png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("load_png16: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("load_png16: corrupt or unreadable PNG " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = 0, h = 0;
    int depth = 0, color = 0;
    png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);

    // Normalize palettes / low bit depths up to 16-bit gray or RGB.
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth < 16) png_set_expand_16(png);
    png_read_update_info(png, info);
    png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);

    int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("load_png16: unsupported channel count " + std::to_string(channels));
    }

    ImageGrid img(static_cast<int>(h), static_cast<int>(w), channels);
    std::vector<png_byte> rowbytes(static_cast<std::size_t>(w) * channels * 2);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, rowbytes.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int ch = 0; ch < channels; ++ch) {
                std::size_t i = (static_cast<std::size_t>(x) * channels + ch) * 2;
                unsigned q = (static_cast<unsigned>(rowbytes[i]) << 8) | rowbytes[i + 1];
                img.at(static_cast<int>(y), static_cast<int>(x), ch) = q / 65535.0;
            }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace nlosim
