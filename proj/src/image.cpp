#include "reloc/image.hpp"

namespace reloc {

Tensor images_to_tensor(const std::vector<const Image*>& imgs) {
    if (imgs.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
    const int h = imgs[0]->h, w = imgs[0]->w;
    Tensor t(static_cast<int>(imgs.size()), 3, h, w);
    for (size_t i = 0; i < imgs.size(); ++i) {
        const Image& im = *imgs[i];
        if (im.h != h || im.w != w)
            throw std::invalid_argument("images_to_tensor: mixed extents in batch");
        std::copy(im.px.begin(), im.px.end(), t.v.begin() + i * im.px.size());
    }
    return t;
}

Tensor image_to_tensor(const Image& img) { return images_to_tensor({&img}); }

Image tensor_to_image(const Tensor& t, int batch_index, ImageRole role) {
    if (t.c != 3) throw std::invalid_argument("tensor_to_image: need 3 channels, got " + t.shape_str());
    Image im(t.h, t.w, role);
    const size_t plane = im.px.size();
    std::copy(t.v.begin() + batch_index * plane, t.v.begin() + (batch_index + 1) * plane,
              im.px.begin());
    return im;
}

Tensor masks_to_tensor(const std::vector<const Mask*>& masks) {
    if (masks.empty()) throw std::invalid_argument("masks_to_tensor: empty batch");
    const int h = masks[0]->h, w = masks[0]->w;
    Tensor t(static_cast<int>(masks.size()), 1, h, w);
    for (size_t i = 0; i < masks.size(); ++i) {
        const Mask& m = *masks[i];
        if (m.h != h || m.w != w)
            throw std::invalid_argument("masks_to_tensor: mixed extents in batch");
        for (size_t e = 0; e < m.v.size(); ++e)
            t.v[i * m.v.size() + e] = m.v[e] ? 1.0 : 0.0;
    }
    return t;
}

}  // namespace reloc
