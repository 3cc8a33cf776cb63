#pragma once

#include <cstdint>
#include <vector>

namespace rvd {

// Start offsets at multiples of `stride`, with the final window snapped to
// the far edge so coverage is total. A dimension not exceeding the window
// yields the single offset 0.
inline std::vector<int64_t> tile_positions(int64_t dim, int64_t window, int64_t stride) {
    std::vector<int64_t> out;
    if (window >= dim) return {0};
    for (int64_t p = 0;; p += stride) {
        if (p + window >= dim) {
            int64_t snapped = dim - window;
            if (out.empty() || out.back() != snapped) out.push_back(snapped);
            break;
        }
        out.push_back(p);
    }
    return out;
}

}  // namespace rvd
