#pragma once

#include "revdeblur/image.hpp"

namespace rvd::metrics {

// Peak signal-to-noise ratio for [0,1] data; 100 dB cap when the MSE is zero.
double psnr(const float* a, const float* b, int64_t n);
double psnr(const Image& a, const Image& b);

// Structural similarity, Gaussian window 11, sigma 1.5, K1=0.01, K2=0.03,
// computed on the valid (fully covered) region and averaged per channel.
double ssim(const Image& a, const Image& b);

// Row-major sample-by-feature matrix for representation similarity.
struct FeatureMatrix {
    int64_t rows = 0, cols = 0;
    std::vector<double> data;

    FeatureMatrix() = default;
    FeatureMatrix(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0.0) {}
    double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
    double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }
};

// Linear centered kernel alignment between two feature sets with matching
// row counts; 1 for identical representations up to isotropic scaling and
// orthogonal rotation.
double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y);

}  // namespace rvd::metrics
