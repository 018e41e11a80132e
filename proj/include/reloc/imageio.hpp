#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "reloc/image.hpp"

namespace reloc::imageio {

// PNG, classic libpng API. Readers force the requested layout (palette and
// alpha are expanded/stripped); writers emit exactly the stated format.
Image read_png_rgb(const std::filesystem::path& path, ImageRole role);
void write_png_rgb(const std::filesystem::path& path, const Image& img);

Mask read_png_mask(const std::filesystem::path& path);  // gray 8-bit, values must be 0 or 255
void write_png_mask(const std::filesystem::path& path, const Mask& mask);

void write_png_gray16(const std::filesystem::path& path, const ProbabilityMap& map);
ProbabilityMap read_png_gray16(const std::filesystem::path& path);

// Baseline JPEG via libjpeg; quality in [1,100].
std::vector<uint8_t> jpeg_encode(const Image& img, int quality);
Image jpeg_decode(const std::vector<uint8_t>& bytes, ImageRole role);
void write_jpeg(const std::filesystem::path& path, const Image& img, int quality);
Image read_jpeg(const std::filesystem::path& path, ImageRole role);

}  // namespace reloc::imageio
