#include "revdeblur/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace rvd {

Image Image::crop(int64_t y, int64_t x, int64_t h, int64_t w) const {
    if (y < 0 || x < 0 || y + h > height || x + w > width)
        throw std::runtime_error("image crop out of bounds");
    Image out(channels, h, w);
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t yy = 0; yy < h; ++yy)
            for (int64_t xx = 0; xx < w; ++xx) out.at(c, yy, xx) = at(c, y + yy, x + xx);
    return out;
}

Tensor<float> Image::to_tensor() const {
    Tensor<float> t(Shape4(1, channels, height, width));
    std::copy(data.begin(), data.end(), t.mut());
    return t;
}

Image Image::from_tensor(const Tensor<float>& t) {
    const auto& s = t.shape();
    if (s.b != 1) throw std::runtime_error("from_tensor expects batch 1, got " + s.str());
    Image img(s.c, s.h, s.w);
    std::copy(t.ptr(), t.ptr() + t.numel(), img.data.begin());
    return img;
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

Image read_png(const std::string& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("failed to decode PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<png_byte> row(png_get_rowbytes(png, info));
    Image img(3, h, w);
    const float inv = 1.0f / 255.0f;
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(row[3 * x + c]) * inv;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::runtime_error("write_png expects 1 or 3 channels");
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open image for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("failed to encode PNG: " + path);
    }

    png_init_io(png, fp.get());
    // Fixed settings keep output byte-identical across runs.
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(img.width * img.channels));
    for (int64_t y = 0; y < img.height; ++y) {
        for (int64_t x = 0; x < img.width; ++x)
            for (int64_t c = 0; c < img.channels; ++c) {
                float v = img.at(c, y, x);
                v = std::min(1.0f, std::max(0.0f, v));
                row[static_cast<size_t>(x * img.channels + c)] =
                    static_cast<png_byte>(std::lround(v * 255.0f));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace rvd
