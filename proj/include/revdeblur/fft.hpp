#pragma once

#include <complex>
#include <map>
#include <mutex>
#include <vector>

#include "revdeblur/tensor.hpp"

namespace rvd::fft {

inline constexpr double kPi = 3.14159265358979323846;

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative radix-2 transform, unnormalized. sign=-1 forward,
// sign=+1 inverse (caller divides by n where a normalized inverse is wanted).
template <class S>
void fft_pow2(std::complex<S>* a, size_t n, int sign) {
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = sign * 2.0 * kPi / static_cast<double>(len);
        std::complex<S> wl(static_cast<S>(std::cos(ang)), static_cast<S>(std::sin(ang)));
        for (size_t i = 0; i < n; i += len) {
            std::complex<S> w(1, 0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<S> u = a[i + k];
                std::complex<S> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Bluestein chirp-z plan for arbitrary-size transforms. Non-power-of-two
// sizes are transformed exactly (no zero-padding of the signal itself).
template <class S>
struct BluesteinPlan {
    size_t n = 0, m = 0;
    std::vector<std::complex<S>> chirp;      // e^{-i pi k^2 / n}
    std::vector<std::complex<S>> kernel_fft; // FFT of conj chirp, length m
};

template <class S>
const BluesteinPlan<S>& bluestein_plan(size_t n) {
    static std::map<size_t, BluesteinPlan<S>> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    BluesteinPlan<S> plan;
    plan.n = n;
    plan.m = next_pow2(2 * n - 1);
    plan.chirp.resize(n);
    for (size_t k = 0; k < n; ++k) {
        double phase = kPi * static_cast<double>((k * k) % (2 * n)) / static_cast<double>(n);
        plan.chirp[k] = std::complex<S>(static_cast<S>(std::cos(phase)), static_cast<S>(-std::sin(phase)));
    }
    plan.kernel_fft.assign(plan.m, std::complex<S>(0, 0));
    plan.kernel_fft[0] = std::conj(plan.chirp[0]);
    for (size_t k = 1; k < n; ++k) {
        plan.kernel_fft[k] = std::conj(plan.chirp[k]);
        plan.kernel_fft[plan.m - k] = std::conj(plan.chirp[k]);
    }
    fft_pow2(plan.kernel_fft.data(), plan.m, -1);
    return cache.emplace(n, std::move(plan)).first->second;
}

// Unnormalized transform of arbitrary length; sign as in fft_pow2.
template <class S>
void fft_any(std::complex<S>* a, size_t n, int sign) {
    if (n <= 1) return;
    if (is_pow2(n)) {
        fft_pow2(a, n, sign);
        return;
    }
    const auto& plan = bluestein_plan<S>(n);
    std::vector<std::complex<S>> buf(plan.m, std::complex<S>(0, 0));
    // A transform with sign=+1 is the conjugate of the sign=-1 transform of
    // the conjugated input.
    for (size_t k = 0; k < n; ++k) {
        std::complex<S> x = (sign < 0) ? a[k] : std::conj(a[k]);
        buf[k] = x * plan.chirp[k];
    }
    fft_pow2(buf.data(), plan.m, -1);
    for (size_t k = 0; k < plan.m; ++k) buf[k] *= plan.kernel_fft[k];
    fft_pow2(buf.data(), plan.m, 1);
    S inv_m = static_cast<S>(1.0 / static_cast<double>(plan.m));
    for (size_t k = 0; k < n; ++k) {
        std::complex<S> y = buf[k] * plan.chirp[k] * inv_m;
        a[k] = (sign < 0) ? y : std::conj(y);
    }
}

// 2-D unnormalized transform over a contiguous h*w complex grid.
template <class S>
void fft2_any(std::complex<S>* grid, size_t h, size_t w, int sign) {
    for (size_t r = 0; r < h; ++r) fft_any(grid + r * w, w, sign);
    std::vector<std::complex<S>> col(h);
    for (size_t cidx = 0; cidx < w; ++cidx) {
        for (size_t r = 0; r < h; ++r) col[r] = grid[r * w + cidx];
        fft_any(col.data(), h, sign);
        for (size_t r = 0; r < h; ++r) grid[r * w + cidx] = col[r];
    }
}

inline int64_t rfft_cols(int64_t w) { return w / 2 + 1; }

// Real-to-half-spectrum 2-D transform of one h*w plane. Output layout is
// wr = w/2+1 complex values per row, unnormalized forward convention.
template <class S>
void rfft2_plane(const S* x, int64_t h, int64_t w, std::complex<S>* out) {
    std::vector<std::complex<S>> grid(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) grid[static_cast<size_t>(i)] = std::complex<S>(x[i], 0);
    fft2_any(grid.data(), static_cast<size_t>(h), static_cast<size_t>(w), -1);
    int64_t wr = rfft_cols(w);
    for (int64_t r = 0; r < h; ++r)
        for (int64_t q = 0; q < wr; ++q) out[r * wr + q] = grid[static_cast<size_t>(r * w + q)];
}

// Half-spectrum to real inverse: Hermitian-completes the missing columns,
// applies the normalized inverse transform and keeps the real part.
template <class S>
void irfft2_plane(const std::complex<S>* y, int64_t h, int64_t w, S* out) {
    int64_t wr = rfft_cols(w);
    std::vector<std::complex<S>> grid(static_cast<size_t>(h * w));
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t q = 0; q < wr; ++q) grid[static_cast<size_t>(r * w + q)] = y[r * wr + q];
        for (int64_t q = wr; q < w; ++q) {
            int64_t rm = (h - r) % h;
            grid[static_cast<size_t>(r * w + q)] = std::conj(y[rm * wr + (w - q)]);
        }
    }
    fft2_any(grid.data(), static_cast<size_t>(h), static_cast<size_t>(w), 1);
    S norm = static_cast<S>(1.0 / static_cast<double>(h * w));
    for (int64_t i = 0; i < h * w; ++i) out[i] = grid[static_cast<size_t>(i)].real() * norm;
}

// Adjoint of rfft2_plane: gradient w.r.t. the real input given gradients for
// the stored Re/Im coefficients. Equal to Re of the unnormalized sign=+1
// transform of the zero-extended half-spectrum gradient.
template <class S>
void rfft2_adjoint_plane(const std::complex<S>* gy, int64_t h, int64_t w, S* gx) {
    int64_t wr = rfft_cols(w);
    std::vector<std::complex<S>> grid(static_cast<size_t>(h * w), std::complex<S>(0, 0));
    for (int64_t r = 0; r < h; ++r)
        for (int64_t q = 0; q < wr; ++q) grid[static_cast<size_t>(r * w + q)] = gy[r * wr + q];
    fft2_any(grid.data(), static_cast<size_t>(h), static_cast<size_t>(w), 1);
    for (int64_t i = 0; i < h * w; ++i) gx[i] = grid[static_cast<size_t>(i)].real();
}

// Adjoint of irfft2_plane. Mirrored interior columns pick up a factor 2, the
// self-conjugate columns (q=0 and, for even w, q=w/2) a factor 1.
template <class S>
void irfft2_adjoint_plane(const S* gx, int64_t h, int64_t w, std::complex<S>* gy) {
    int64_t wr = rfft_cols(w);
    std::vector<std::complex<S>> grid(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) grid[static_cast<size_t>(i)] = std::complex<S>(gx[i], 0);
    fft2_any(grid.data(), static_cast<size_t>(h), static_cast<size_t>(w), -1);
    S norm = static_cast<S>(1.0 / static_cast<double>(h * w));
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t q = 0; q < wr; ++q) {
            bool self_conjugate = (q == 0) || (w % 2 == 0 && q == w / 2);
            S weight = self_conjugate ? norm : static_cast<S>(2) * norm;
            gy[r * wr + q] = grid[static_cast<size_t>(r * w + q)] * weight;
        }
    }
}

}  // namespace rvd::fft
