#pragma once

#include <optional>
#include <vector>

#include "reloc/image.hpp"
#include "reloc/nets.hpp"

namespace reloc::inference {

struct WindowSpec {
    int window = 512;
    int stride = 512;

    void validate() const;
};

// Window start offsets covering [0, extent): multiples of the stride, with a
// final window shifted flush to the border when the extent is not covered.
std::vector<int> tile_positions(int extent, int window, int stride);

// Tiled prediction. Each window is optionally restored, then localized;
// overlapping predictions are averaged. Images smaller than the window are
// reflect-padded and the output cropped back. When restored_out is non-null
// the stitched restored image is written there (same averaging).
ProbabilityMap sliding_window_predict(nets::LocalizationNet& loc, const Image& image,
                                      const WindowSpec& spec,
                                      nets::RestorationNet* restorer = nullptr,
                                      Image* restored_out = nullptr);

Mask threshold(const ProbabilityMap& prob, double t);

struct PredictionResult {
    ProbabilityMap prob;
    Mask mask;
    std::optional<Image> restored;
    double seconds = 0.0;
};

// Full ReLoc test-time path: restore-then-localize per window, stitch,
// threshold at t.
PredictionResult reloc_pipeline(const nets::Checkpoint& r_ckpt, const nets::Checkpoint& l_ckpt,
                                const Image& image, const WindowSpec& spec, double t = 0.5);

// Same pipeline with modules taken from independent runs (the transferability
// experiment); r_ckpt == l_ckpt's companion reduces to reloc_pipeline.
PredictionResult compose_modules(const nets::Checkpoint& r_ckpt, const nets::Checkpoint& l_ckpt,
                                 const Image& image, const WindowSpec& spec, double t = 0.5);

// Localization without restoration, stitched the same way.
PredictionResult localize_pipeline(const nets::Checkpoint& l_ckpt, const Image& image,
                                   const WindowSpec& spec, double t = 0.5);

// Restoration-only tiling with the same window layout and averaging.
Image sliding_window_restore(nets::RestorationNet& restorer, const Image& image,
                             const WindowSpec& spec);

}  // namespace reloc::inference
