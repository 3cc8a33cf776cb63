#pragma once

#include "revdeblur/image.hpp"
#include "revdeblur/model.hpp"
#include "revdeblur/policy.hpp"

namespace rvd {

// Sliding-window plan; overlapping regions are blended with linear ramps.
struct TileConfig {
    int64_t window = 384;
    int64_t stride = 352;

    int64_t overlap() const { return window - stride; }
    void validate() const {
        if (stride <= 0 || window <= 0 || stride > window)
            throw std::runtime_error("tile config requires 0 < stride <= window");
    }
};

struct TileRect {
    int64_t y = 0, x = 0, h = 0, w = 0;
};

std::vector<TileRect> tile_plan(int64_t height, int64_t width, const TileConfig& cfg);

struct TileExit {
    int64_t x = 0, y = 0;
    int exit = 0;
};

struct InferenceOptions {
    int fixed_j = 0;        // 0 = run every column
    bool adaptive = false;  // classifier + policy select the exit per window
    ExitPolicy policy;
    TileConfig tiles;
};

struct InferenceResult {
    Image output;
    std::vector<TileExit> exits;
    double mean_exit = 0;  // average executed columns per tile
};

InferenceResult deblur_image(Model<float>& model, const Image& blur, const InferenceOptions& opt);

void save_exit_map(const std::string& path, const std::vector<TileExit>& exits);

}  // namespace rvd
