#pragma once

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "stip/errors.hpp"
#include "stip/tensor.hpp"

/// 8-bit PNG of a [C, H, W] frame in [0, 1]; C must be 1 (gray) or 3 (RGB).
inline void write_png(const std::filesystem::path& path, const stip::Tensor<float>& frame) {
    const int C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
    stip::require(C == 1 || C == 3, "PNG output needs 1 or 3 channels, got " + std::to_string(C));

    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw stip::IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw stip::IoError("libpng initialisation failed");
    }
    std::vector<png_byte> row(static_cast<std::size_t>(W * C));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw stip::IoError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                const float v = std::clamp(frame[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * W + x], 0.0f, 1.0f);
                row[static_cast<std::size_t>(x * C + c)] = static_cast<png_byte>(v * 255.0f + 0.5f);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}
