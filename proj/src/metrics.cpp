#include "revdeblur/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "revdeblur/policy.hpp"

namespace rvd::metrics {

double psnr(const float* a, const float* b, int64_t n) {
    double mse = 0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    return psnr_of_mse(mse);
}

double psnr(const Image& a, const Image& b) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw std::runtime_error("psnr: image shapes differ");
    return psnr(a.data.data(), b.data.data(), static_cast<int64_t>(a.data.size()));
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

std::vector<double> gaussian_window() {
    std::vector<double> w(kWin);
    double sum = 0;
    for (int i = 0; i < kWin; ++i) {
        double d = i - (kWin - 1) / 2.0;
        w[static_cast<size_t>(i)] = std::exp(-d * d / (2 * kSigma * kSigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Separable valid-mode filtering of one channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int64_t h, int64_t w,
                                 const std::vector<double>& win) {
    int64_t oh = h - kWin + 1, ow = w - kWin + 1;
    std::vector<double> tmp(static_cast<size_t>(h * ow));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            double acc = 0;
            for (int k = 0; k < kWin; ++k) acc += win[static_cast<size_t>(k)] * plane[static_cast<size_t>(y * w + x + k)];
            tmp[static_cast<size_t>(y * ow + x)] = acc;
        }
    std::vector<double> out(static_cast<size_t>(oh * ow));
    for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            double acc = 0;
            for (int k = 0; k < kWin; ++k) acc += win[static_cast<size_t>(k)] * tmp[static_cast<size_t>((y + k) * ow + x)];
            out[static_cast<size_t>(y * ow + x)] = acc;
        }
    return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw std::runtime_error("ssim: image shapes differ");
    if (a.height < kWin || a.width < kWin)
        throw std::runtime_error("ssim: image smaller than the filter window");
    const auto win = gaussian_window();
    const double c1 = kK1 * kK1, c2 = kK2 * kK2;  // data range 1.0

    double total = 0;
    int64_t hw = a.pixels();
    for (int64_t c = 0; c < a.channels; ++c) {
        std::vector<double> x(static_cast<size_t>(hw)), y(static_cast<size_t>(hw));
        std::vector<double> xx(static_cast<size_t>(hw)), yy(static_cast<size_t>(hw)), xy(static_cast<size_t>(hw));
        for (int64_t i = 0; i < hw; ++i) {
            double xv = a.data[static_cast<size_t>(c * hw + i)];
            double yv = b.data[static_cast<size_t>(c * hw + i)];
            x[static_cast<size_t>(i)] = xv;
            y[static_cast<size_t>(i)] = yv;
            xx[static_cast<size_t>(i)] = xv * xv;
            yy[static_cast<size_t>(i)] = yv * yv;
            xy[static_cast<size_t>(i)] = xv * yv;
        }
        auto mu1 = filter_valid(x, a.height, a.width, win);
        auto mu2 = filter_valid(y, a.height, a.width, win);
        auto sxx = filter_valid(xx, a.height, a.width, win);
        auto syy = filter_valid(yy, a.height, a.width, win);
        auto sxy = filter_valid(xy, a.height, a.width, win);
        double acc = 0;
        for (size_t i = 0; i < mu1.size(); ++i) {
            double m1 = mu1[i], m2 = mu2[i];
            double v1 = sxx[i] - m1 * m1;
            double v2 = syy[i] - m2 * m2;
            double cov = sxy[i] - m1 * m2;
            acc += ((2 * m1 * m2 + c1) * (2 * cov + c2)) / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
        }
        total += acc / static_cast<double>(mu1.size());
    }
    return total / static_cast<double>(a.channels);
}

double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y) {
    if (x.rows != y.rows) throw std::runtime_error("linear_cka: row counts differ");
    if (x.rows < 2) throw std::runtime_error("linear_cka: need at least 2 rows");
    int64_t n = x.rows;

    // Column-center, then work with the n x n Gram matrices:
    // |Yc' Xc|_F^2 = <Gx, Gy>, |Xc' Xc|_F = |Gx|_F.
    auto gram = [n](const FeatureMatrix& m) {
        std::vector<double> mean(static_cast<size_t>(m.cols), 0.0);
        for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < m.cols; ++c) mean[static_cast<size_t>(c)] += m.at(r, c);
        for (auto& v : mean) v /= static_cast<double>(n);
        std::vector<double> g(static_cast<size_t>(n * n), 0.0);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i; j < n; ++j) {
                double acc = 0;
                for (int64_t c = 0; c < m.cols; ++c)
                    acc += (m.at(i, c) - mean[static_cast<size_t>(c)]) * (m.at(j, c) - mean[static_cast<size_t>(c)]);
                g[static_cast<size_t>(i * n + j)] = acc;
                g[static_cast<size_t>(j * n + i)] = acc;
            }
        return g;
    };

    auto gx = gram(x);
    auto gy = gram(y);
    double cross = 0, nx = 0, ny = 0;
    for (size_t i = 0; i < gx.size(); ++i) {
        cross += gx[i] * gy[i];
        nx += gx[i] * gx[i];
        ny += gy[i] * gy[i];
    }
    if (nx <= 0 || ny <= 0) throw std::runtime_error("linear_cka: zero-variance input");
    return cross / (std::sqrt(nx) * std::sqrt(ny));
}

}  // namespace rvd::metrics
