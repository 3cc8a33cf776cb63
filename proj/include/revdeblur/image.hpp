#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revdeblur/tensor.hpp"

namespace rvd {

// Planar float image in [0,1], channel-major (c,h,w). Stored on disk as
// 8-bit PNG; in-memory math never re-quantizes until save.
struct Image {
    int64_t channels = 0, height = 0, width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int64_t c, int64_t h, int64_t w) : channels(c), height(h), width(w), data(static_cast<size_t>(c * h * w), 0.f) {}

    float at(int64_t c, int64_t y, int64_t x) const { return data[static_cast<size_t>((c * height + y) * width + x)]; }
    float& at(int64_t c, int64_t y, int64_t x) { return data[static_cast<size_t>((c * height + y) * width + x)]; }
    int64_t pixels() const { return height * width; }

    Image crop(int64_t y, int64_t x, int64_t h, int64_t w) const;

    Tensor<float> to_tensor() const;                  // (1,c,h,w)
    static Image from_tensor(const Tensor<float>& t); // batch must be 1
};

Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

}  // namespace rvd
