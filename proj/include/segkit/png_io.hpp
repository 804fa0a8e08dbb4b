#pragma once

// PNG reading and writing via libpng: 8-bit RGB images as [3,H,W] tensors in
// [0,1], 8-bit single-channel index masks as LabelMaps. Palette masks are
// read as raw indices.

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "segkit/tensor.hpp"

namespace segkit {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline void write_png_rgb(const std::string& path, const Tensor<float>& image) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw ShapeError("write_png_rgb expects [3,H,W], got " + shape_str(image.shape()));
    const int64_t h = image.dim(1), w = image.dim(2);
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw Error("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(w) * 3);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                float v = image(c, y, x);
                v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
                row[static_cast<size_t>(x * 3 + c)] =
                    static_cast<png_byte>(std::lround(v * 255.0f));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Tensor<float> read_png_rgb(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw Error("cannot open " + path + " for reading");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng read failed for " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int64_t h = png_get_image_height(png, info);
    const int64_t w = png_get_image_width(png, info);
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(path + " did not decode to 3 channels");
    }
    Tensor<float> out = Tensor<float>::zeros({3, h, w});
    std::vector<png_byte> row(static_cast<size_t>(w) * 3);
    for (int64_t y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                out(c, y, x) = static_cast<float>(row[static_cast<size_t>(x * 3 + c)]) / 255.0f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

inline void write_png_mask(const std::string& path, const LabelMap& mask) {
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw Error("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(mask.w), static_cast<png_uint_32>(mask.h),
                 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(mask.w));
    for (int64_t y = 0; y < mask.h; ++y) {
        for (int64_t x = 0; x < mask.w; ++x) {
            const int32_t v = mask.at(y, x);
            if (v < 0 || v > 255)
                throw ValueError("mask value " + std::to_string(v) +
                                 " does not fit an 8-bit png at (y=" + std::to_string(y) +
                                 ",x=" + std::to_string(x) + ")");
            row[static_cast<size_t>(x)] = static_cast<png_byte>(v);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline LabelMap read_png_mask(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw Error("cannot open " + path + " for reading");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng read failed for " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const png_byte ct = png_get_color_type(png, info);
    // palette masks carry the label in the index; keep packed bytes otherwise
    if (ct != PNG_COLOR_TYPE_GRAY && ct != PNG_COLOR_TYPE_PALETTE) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(path + " is not a single-channel index mask");
    }
    png_set_strip_16(png);
    png_set_packing(png);
    png_read_update_info(png, info);
    const int64_t h = png_get_image_height(png, info);
    const int64_t w = png_get_image_width(png, info);
    LabelMap mask(h, w);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (int64_t y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int64_t x = 0; x < w; ++x)
            mask.at(y, x) = static_cast<int32_t>(row[static_cast<size_t>(x)]);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return mask;
}

}  // namespace segkit
