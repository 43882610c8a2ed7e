#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "occluscat/core/common.hpp"

namespace occluscat::harness {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path);
    return f;
}

inline void write_png(const std::string& path, int height, int width, int color_type,
                      int bit_depth, const std::vector<png_bytep>& rows) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);  // memory is little-endian
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct PngImage {
    int height = 0, width = 0, channels = 0, bit_depth = 0;
    std::vector<uint8_t> bytes;  // row-major, little-endian for 16-bit
};

inline PngImage read_png(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read failed: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    PngImage img;
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (img.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (img.bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    img.channels = png_get_channels(png, info);
    size_t rowbytes = png_get_rowbytes(png, info);
    img.bytes.resize(rowbytes * img.height);
    std::vector<png_bytep> rows(img.height);
    for (int r = 0; r < img.height; ++r) rows[r] = img.bytes.data() + r * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace detail

inline void write_png_rgb8(const std::string& path, int height, int width,
                           const uint8_t* data) {
    std::vector<png_bytep> rows(height);
    for (int r = 0; r < height; ++r)
        rows[r] = const_cast<png_bytep>(data + static_cast<int64_t>(r) * width * 3);
    detail::write_png(path, height, width, PNG_COLOR_TYPE_RGB, 8, rows);
}

inline void write_png_gray8(const std::string& path, int height, int width,
                            const uint8_t* data) {
    std::vector<png_bytep> rows(height);
    for (int r = 0; r < height; ++r)
        rows[r] = const_cast<png_bytep>(data + static_cast<int64_t>(r) * width);
    detail::write_png(path, height, width, PNG_COLOR_TYPE_GRAY, 8, rows);
}

inline void write_png_gray16(const std::string& path, int height, int width,
                             const uint16_t* data) {
    std::vector<png_bytep> rows(height);
    for (int r = 0; r < height; ++r)
        rows[r] = const_cast<png_bytep>(
            reinterpret_cast<const uint8_t*>(data + static_cast<int64_t>(r) * width));
    detail::write_png(path, height, width, PNG_COLOR_TYPE_GRAY, 16, rows);
}

inline void read_png_rgb8(const std::string& path, int& height, int& width,
                          std::vector<uint8_t>& out) {
    detail::PngImage img = detail::read_png(path);
    if (img.channels != 3 || img.bit_depth != 8)
        throw IoError("expected 8-bit RGB png: " + path);
    height = img.height;
    width = img.width;
    out = std::move(img.bytes);
}

inline void read_png_gray8(const std::string& path, int& height, int& width,
                           std::vector<uint8_t>& out) {
    detail::PngImage img = detail::read_png(path);
    if (img.channels != 1 || img.bit_depth != 8)
        throw IoError("expected 8-bit gray png: " + path);
    height = img.height;
    width = img.width;
    out = std::move(img.bytes);
}

inline void read_png_gray16(const std::string& path, int& height, int& width,
                            std::vector<uint16_t>& out) {
    detail::PngImage img = detail::read_png(path);
    if (img.channels != 1 || img.bit_depth != 16)
        throw IoError("expected 16-bit gray png: " + path);
    height = img.height;
    width = img.width;
    out.resize(static_cast<size_t>(height) * width);
    std::memcpy(out.data(), img.bytes.data(), out.size() * 2);
}

}  // namespace occluscat::harness
