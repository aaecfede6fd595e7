#include "nlosim/nn/tensor.hpp"

#include <cmath>

namespace nlosim::nn {

std::string Tensor::shape_str() const {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

bool Tensor::finite() const {
    for (real_t x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

Tensor from_image(const ImageGrid& img) {
    Tensor t(img.h, img.w, img.c);
    for (std::size_t i = 0; i < img.v.size(); ++i) t.v[i] = static_cast<real_t>(img.v[i]);
    return t;
}

ImageGrid to_image(const Tensor& t) {
    ImageGrid img(t.h, t.w, t.c);
    for (std::size_t i = 0; i < t.v.size(); ++i) img.v[i] = static_cast<double>(t.v[i]);
    return img;
}

}  // namespace nlosim::nn
