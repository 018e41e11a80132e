#include "reloc/inference.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace reloc::inference {

void WindowSpec::validate() const {
    if (window < 1 || stride < 1 || stride > window)
        throw std::invalid_argument("window spec: need 1 <= stride <= window");
}

std::vector<int> tile_positions(int extent, int window, int stride) {
    if (extent <= window) return {0};
    std::vector<int> pos;
    for (int p = 0; p + window <= extent; p += stride) pos.push_back(p);
    if (pos.back() + window < extent) pos.push_back(extent - window);
    return pos;
}

ProbabilityMap sliding_window_predict(nets::LocalizationNet& loc, const Image& image,
                                      const WindowSpec& spec, nets::RestorationNet* restorer,
                                      Image* restored_out) {
    spec.validate();
    const int g = loc.cfg.granularity();
    if (spec.window % g != 0)
        throw std::invalid_argument("window must be divisible by the network granularity " +
                                    std::to_string(g));
    if (restorer && spec.window % restorer->cfg.granularity() != 0)
        throw std::invalid_argument("window must be divisible by the restoration granularity");

    const int ph = std::max(image.h, spec.window);
    const int pw = std::max(image.w, spec.window);
    const Image padded = nets::pad_reflect(image, ph, pw);

    const std::vector<int> ys = tile_positions(ph, spec.window, spec.stride);
    const std::vector<int> xs = tile_positions(pw, spec.window, spec.stride);

    ProbabilityMap sum(ph, pw);
    std::vector<double> restored_sum;
    if (restored_out) restored_sum.assign(static_cast<size_t>(3) * ph * pw, 0.0);
    std::vector<int> count(static_cast<size_t>(ph) * pw, 0);

    Image win(spec.window, spec.window, padded.role);
    for (int y0 : ys)
        for (int x0 : xs) {
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < spec.window; ++y)
                    for (int x = 0; x < spec.window; ++x)
                        win.at(c, y, x) = padded.at(c, y0 + y, x0 + x);

            Tensor input = image_to_tensor(win);
            if (restorer) input = restorer->forward(input, false);
            const Tensor p = loc.forward(input, false);

            for (int y = 0; y < spec.window; ++y)
                for (int x = 0; x < spec.window; ++x) {
                    sum.at(y0 + y, x0 + x) += p.at(0, 0, y, x);
                    ++count[static_cast<size_t>(y0 + y) * pw + (x0 + x)];
                }
            if (restored_out)
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < spec.window; ++y)
                        for (int x = 0; x < spec.window; ++x)
                            restored_sum[(static_cast<size_t>(c) * ph + y0 + y) * pw + (x0 + x)] +=
                                input.at(0, c, y, x);
        }

    ProbabilityMap out(image.h, image.w);
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x)
            out.at(y, x) = sum.at(y, x) / count[static_cast<size_t>(y) * pw + x];
    if (restored_out) {
        Image rest(image.h, image.w, ImageRole::Restored);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < image.h; ++y)
                for (int x = 0; x < image.w; ++x)
                    rest.at(c, y, x) = restored_sum[(static_cast<size_t>(c) * ph + y) * pw + x] /
                                       count[static_cast<size_t>(y) * pw + x];
        *restored_out = std::move(rest);
    }
    return out;
}

Mask threshold(const ProbabilityMap& prob, double t) {
    if (!(t > 0.0 && t < 1.0))
        throw std::invalid_argument("threshold must lie in (0,1), got " + std::to_string(t));
    Mask m(prob.h, prob.w);
    for (size_t i = 0; i < prob.v.size(); ++i) m.v[i] = prob.v[i] >= t ? 1 : 0;
    return m;
}

namespace {

PredictionResult run_pipeline(nets::RestorationNet* restorer, nets::LocalizationNet& loc,
                              const Image& image, const WindowSpec& spec, double t) {
    const auto start = std::chrono::steady_clock::now();
    PredictionResult result;
    Image restored;
    result.prob = sliding_window_predict(loc, image, spec, restorer, restorer ? &restored : nullptr);
    if (restorer) result.restored = std::move(restored);
    result.mask = threshold(result.prob, t);
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace

PredictionResult reloc_pipeline(const nets::Checkpoint& r_ckpt, const nets::Checkpoint& l_ckpt,
                                const Image& image, const WindowSpec& spec, double t) {
    nets::RestorationNet res = nets::restoration_from_checkpoint(r_ckpt);
    nets::LocalizationNet loc = nets::localization_from_checkpoint(l_ckpt);
    return run_pipeline(&res, loc, image, spec, t);
}

PredictionResult compose_modules(const nets::Checkpoint& r_ckpt, const nets::Checkpoint& l_ckpt,
                                 const Image& image, const WindowSpec& spec, double t) {
    return reloc_pipeline(r_ckpt, l_ckpt, image, spec, t);
}

PredictionResult localize_pipeline(const nets::Checkpoint& l_ckpt, const Image& image,
                                   const WindowSpec& spec, double t) {
    nets::LocalizationNet loc = nets::localization_from_checkpoint(l_ckpt);
    return run_pipeline(nullptr, loc, image, spec, t);
}

Image sliding_window_restore(nets::RestorationNet& restorer, const Image& image,
                             const WindowSpec& spec) {
    spec.validate();
    if (spec.window % restorer.cfg.granularity() != 0)
        throw std::invalid_argument("window must be divisible by the restoration granularity");

    const int ph = std::max(image.h, spec.window);
    const int pw = std::max(image.w, spec.window);
    const Image padded = nets::pad_reflect(image, ph, pw);
    const std::vector<int> ys = tile_positions(ph, spec.window, spec.stride);
    const std::vector<int> xs = tile_positions(pw, spec.window, spec.stride);

    std::vector<double> sum(static_cast<size_t>(3) * ph * pw, 0.0);
    std::vector<int> count(static_cast<size_t>(ph) * pw, 0);
    Image win(spec.window, spec.window, padded.role);
    for (int y0 : ys)
        for (int x0 : xs) {
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < spec.window; ++y)
                    for (int x = 0; x < spec.window; ++x)
                        win.at(c, y, x) = padded.at(c, y0 + y, x0 + x);
            const Tensor restored = restorer.forward(image_to_tensor(win), false);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < spec.window; ++y)
                    for (int x = 0; x < spec.window; ++x)
                        sum[(static_cast<size_t>(c) * ph + y0 + y) * pw + (x0 + x)] +=
                            restored.at(0, c, y, x);
            for (int y = 0; y < spec.window; ++y)
                for (int x = 0; x < spec.window; ++x)
                    ++count[static_cast<size_t>(y0 + y) * pw + (x0 + x)];
        }

    Image out(image.h, image.w, ImageRole::Restored);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < image.h; ++y)
            for (int x = 0; x < image.w; ++x)
                out.at(c, y, x) = sum[(static_cast<size_t>(c) * ph + y) * pw + x] /
                                  count[static_cast<size_t>(y) * pw + x];
    return out;
}

}  // namespace reloc::inference
