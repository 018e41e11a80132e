#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "reloc/tensor.hpp"

namespace reloc {

enum class ImageRole { Plain, Distorted, Restored };

inline const char* role_name(ImageRole r) {
    switch (r) {
        case ImageRole::Plain: return "plain";
        case ImageRole::Distorted: return "distorted";
        case ImageRole::Restored: return "restored";
    }
    return "?";
}

// H x W x 3 raster, values in [0,1], planar channel layout. The role is fixed
// at construction.
struct Image {
    int h = 0, w = 0;
    std::vector<double> px;  // [3][h][w]
    ImageRole role = ImageRole::Plain;

    Image() = default;
    Image(int h_, int w_, ImageRole r)
        : h(h_), w(w_), px(static_cast<size_t>(3) * h_ * w_, 0.0), role(r) {
        if (h_ < 1 || w_ < 1) throw std::invalid_argument("Image: extents must be >= 1");
    }

    double& at(int c, int y, int x) { return px[(static_cast<size_t>(c) * h + y) * w + x]; }
    double at(int c, int y, int x) const { return px[(static_cast<size_t>(c) * h + y) * w + x]; }
};

// H x W binary map, 1 = tampered pixel.
struct Mask {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    Mask() = default;
    Mask(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}

    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }

    bool any() const {
        for (uint8_t e : v)
            if (e) return true;
        return false;
    }
};

// H x W per-pixel tamper probability in [0,1].
struct ProbabilityMap {
    int h = 0, w = 0;
    std::vector<double> v;

    ProbabilityMap() = default;
    ProbabilityMap(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0.0) {}

    double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

// Batch of images -> [N,3,H,W]; all images must share extents.
Tensor images_to_tensor(const std::vector<const Image*>& imgs);
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t, int batch_index, ImageRole role);

// Mask -> [1,1,H,W] of {0,1}; batched variant stacks along N.
Tensor masks_to_tensor(const std::vector<const Mask*>& masks);

}  // namespace reloc
