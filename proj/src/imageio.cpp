#include "reloc/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

#include <jpeglib.h>
#include <png.h>

namespace fs = std::filesystem;

namespace reloc::imageio {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
    (void)msg;
    longjmp(png_jmpbuf(png), 1);
}
void png_warn_fn(png_structp, png_const_charp) {}

inline uint8_t to_u8(double v) {
    const double s = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<uint8_t>(s);
}
inline uint16_t to_u16(double v) {
    const double s = std::lround(std::clamp(v, 0.0, 1.0) * 65535.0);
    return static_cast<uint16_t>(s);
}

// Decoded raw PNG: interleaved rows, 8 or 16 bits per channel.
struct PngRaw {
    int w = 0, h = 0, channels = 0, bit_depth = 0;
    std::vector<uint8_t> bytes;  // row-major, big-endian for 16-bit (PNG order)
};

PngRaw read_png_raw(const fs::path& path, bool want_gray, bool keep_16bit) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    if (!png) throw std::runtime_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    PngRaw raw;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unreadable PNG: " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (!keep_16bit) png_set_strip_16(png);
    if (want_gray)
        png_set_rgb_to_gray(png, PNG_ERROR_ACTION_NONE, -1, -1);
    else
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    raw.w = static_cast<int>(png_get_image_width(png, info));
    raw.h = static_cast<int>(png_get_image_height(png, info));
    raw.channels = png_get_channels(png, info);
    raw.bit_depth = png_get_bit_depth(png, info);
    const size_t rowbytes = png_get_rowbytes(png, info);
    raw.bytes.resize(rowbytes * raw.h);
    rows.resize(raw.h);
    for (int y = 0; y < raw.h; ++y) rows[y] = raw.bytes.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return raw;
}

void write_png_raw(const fs::path& path, int w, int h, int color_type, int bit_depth,
                   const std::vector<uint8_t>& bytes) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    if (!png) throw std::runtime_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("PNG write failed: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const size_t rowbytes = static_cast<size_t>(w) * channels * (bit_depth / 8);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y)
        rows[y] = const_cast<png_bytep>(bytes.data() + rowbytes * y);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_png_rgb(const fs::path& path, ImageRole role) {
    const PngRaw raw = read_png_raw(path, /*want_gray=*/false, /*keep_16bit=*/false);
    Image img(raw.h, raw.w, role);
    for (int y = 0; y < raw.h; ++y)
        for (int x = 0; x < raw.w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = raw.bytes[(static_cast<size_t>(y) * raw.w + x) * 3 + c] / 255.0;
    return img;
}

void write_png_rgb(const fs::path& path, const Image& img) {
    std::vector<uint8_t> bytes(static_cast<size_t>(img.h) * img.w * 3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                bytes[(static_cast<size_t>(y) * img.w + x) * 3 + c] = to_u8(img.at(c, y, x));
    write_png_raw(path, img.w, img.h, PNG_COLOR_TYPE_RGB, 8, bytes);
}

Mask read_png_mask(const fs::path& path) {
    const PngRaw raw = read_png_raw(path, /*want_gray=*/true, /*keep_16bit=*/false);
    Mask m(raw.h, raw.w);
    for (size_t i = 0; i < m.v.size(); ++i) {
        const uint8_t b = raw.bytes[i];
        if (b != 0 && b != 255)
            throw std::runtime_error("mask is not binary (found value " + std::to_string(b) +
                                     "): " + path.string());
        m.v[i] = b ? 1 : 0;
    }
    return m;
}

void write_png_mask(const fs::path& path, const Mask& mask) {
    std::vector<uint8_t> bytes(mask.v.size());
    for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.v[i] ? 255 : 0;
    write_png_raw(path, mask.w, mask.h, PNG_COLOR_TYPE_GRAY, 8, bytes);
}

void write_png_gray16(const fs::path& path, const ProbabilityMap& map) {
    std::vector<uint8_t> bytes(map.v.size() * 2);
    for (size_t i = 0; i < map.v.size(); ++i) {
        const uint16_t s = to_u16(map.v[i]);
        bytes[2 * i] = static_cast<uint8_t>(s >> 8);  // PNG is big-endian
        bytes[2 * i + 1] = static_cast<uint8_t>(s & 0xff);
    }
    write_png_raw(path, map.w, map.h, PNG_COLOR_TYPE_GRAY, 16, bytes);
}

ProbabilityMap read_png_gray16(const fs::path& path) {
    const PngRaw raw = read_png_raw(path, /*want_gray=*/true, /*keep_16bit=*/true);
    ProbabilityMap map(raw.h, raw.w);
    if (raw.bit_depth == 16) {
        for (size_t i = 0; i < map.v.size(); ++i) {
            const uint16_t s = static_cast<uint16_t>((raw.bytes[2 * i] << 8) | raw.bytes[2 * i + 1]);
            map.v[i] = s / 65535.0;
        }
    } else {
        for (size_t i = 0; i < map.v.size(); ++i) map.v[i] = raw.bytes[i] / 255.0;
    }
    return map;
}

namespace {

struct JpegErr {
    jpeg_error_mgr pub;
    jmp_buf env;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    JpegErr* err = reinterpret_cast<JpegErr*>(cinfo->err);
    longjmp(err->env, 1);
}

std::vector<uint8_t> image_to_rgb8(const Image& img) {
    std::vector<uint8_t> rgb(static_cast<size_t>(img.h) * img.w * 3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                rgb[(static_cast<size_t>(y) * img.w + x) * 3 + c] = to_u8(img.at(c, y, x));
    return rgb;
}

}  // namespace

std::vector<uint8_t> jpeg_encode(const Image& img, int quality) {
    if (quality < 1 || quality > 100)
        throw std::invalid_argument("jpeg quality out of [1,100]: " + std::to_string(quality));
    const std::vector<uint8_t> rgb = image_to_rgb8(img);

    jpeg_compress_struct cinfo;
    JpegErr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    unsigned char* buf = nullptr;
    unsigned long buf_size = 0;
    if (setjmp(jerr.env)) {
        jpeg_destroy_compress(&cinfo);
        free(buf);
        throw std::runtime_error("JPEG encode failed");
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buf, &buf_size);
    cinfo.image_width = img.w;
    cinfo.image_height = img.h;
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);  // TRUE: force baseline tables
    jpeg_start_compress(&cinfo, TRUE);
    const size_t stride = static_cast<size_t>(img.w) * 3;
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(rgb.data() + cinfo.next_scanline * stride);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::vector<uint8_t> out(buf, buf + buf_size);
    free(buf);
    return out;
}

Image jpeg_decode(const std::vector<uint8_t>& bytes, ImageRole role) {
    jpeg_decompress_struct cinfo;
    JpegErr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.env)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("JPEG decode failed");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, const_cast<unsigned char*>(bytes.data()),
                 static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    Image img(static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width), role);
    std::vector<uint8_t> row(static_cast<size_t>(img.w) * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        const int y = static_cast<int>(cinfo.output_scanline);
        JSAMPROW rp = row.data();
        jpeg_read_scanlines(&cinfo, &rp, 1);
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = row[static_cast<size_t>(x) * 3 + c] / 255.0;
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

void write_jpeg(const fs::path& path, const Image& img, int quality) {
    const std::vector<uint8_t> bytes = jpeg_encode(img, quality);
    FilePtr f = open_file(path, "wb");
    if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
        throw std::runtime_error("short write: " + path.string());
}

Image read_jpeg(const fs::path& path, ImageRole role) {
    FilePtr f = open_file(path, "rb");
    std::fseek(f.get(), 0, SEEK_END);
    const long size = std::ftell(f.get());
    std::fseek(f.get(), 0, SEEK_SET);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (std::fread(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
        throw std::runtime_error("short read: " + path.string());
    return jpeg_decode(bytes, role);
}

}  // namespace reloc::imageio
