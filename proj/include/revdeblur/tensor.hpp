#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvd {

// Dense (batch, channel, height, width) shape. Vectors and scalars are
// carried as degenerate shapes, e.g. a per-channel bias is (1,c,1,1).
struct Shape4 {
    int64_t b = 0, c = 0, h = 0, w = 0;

    Shape4() = default;
    Shape4(int64_t b_, int64_t c_, int64_t h_, int64_t w_) : b(b_), c(c_), h(h_), w(w_) {}

    int64_t numel() const { return b * c * h * w; }
    bool operator==(const Shape4& o) const { return b == o.b && c == o.c && h == o.h && w == o.w; }
    bool operator!=(const Shape4& o) const { return !(*this == o); }

    std::string str() const {
        return "(" + std::to_string(b) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

// Raised when an op produces NaN/Inf or is fed invalid shapes.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense 4-D tensor. The buffer is shared between copies; every op allocates
// a fresh buffer for its output, so shared buffers are never written through
// two handles.
template <class S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape4 shape)
        : shape_(shape), data_(std::make_shared<std::vector<S>>(static_cast<size_t>(shape.numel()), S(0))) {}

    Tensor(Shape4 shape, std::vector<S> values)
        : shape_(shape), data_(std::make_shared<std::vector<S>>(std::move(values))) {
        if (static_cast<int64_t>(data_->size()) != shape_.numel())
            throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                             " does not match shape " + shape_.str());
    }

    static Tensor zeros(Shape4 shape) { return Tensor(shape); }

    static Tensor full(Shape4 shape, S value) {
        Tensor t(shape);
        std::fill(t.mut(), t.mut() + t.numel(), value);
        return t;
    }

    static Tensor scalar(S value) { return full(Shape4(1, 1, 1, 1), value); }

    const Shape4& shape() const { return shape_; }
    int64_t numel() const { return shape_.numel(); }
    size_t bytes() const { return static_cast<size_t>(numel()) * sizeof(S); }
    bool defined() const { return data_ != nullptr; }

    const S* ptr() const { return data_->data(); }
    S* mut() { return data_->data(); }

    S at(int64_t b, int64_t c, int64_t h, int64_t w) const {
        return (*data_)[static_cast<size_t>(((b * shape_.c + c) * shape_.h + h) * shape_.w + w)];
    }
    S& at(int64_t b, int64_t c, int64_t h, int64_t w) {
        return (*data_)[static_cast<size_t>(((b * shape_.c + c) * shape_.h + h) * shape_.w + w)];
    }

    Tensor clone() const {
        Tensor t(shape_);
        std::memcpy(t.mut(), ptr(), bytes());
        return t;
    }

    // Releases the buffer but keeps the shape; used when a tape slot is
    // dropped and later rematerialized.
    void release() { data_.reset(); }

    bool all_finite() const {
        const S* p = ptr();
        for (int64_t i = 0, n = numel(); i < n; ++i)
            if (!std::isfinite(static_cast<double>(p[i]))) return false;
        return true;
    }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> t(shape_);
        const S* src = ptr();
        T* dst = t.mut();
        for (int64_t i = 0, n = numel(); i < n; ++i) dst[i] = static_cast<T>(src[i]);
        return t;
    }

private:
    Shape4 shape_{0, 0, 0, 0};
    std::shared_ptr<std::vector<S>> data_;
};

// Relative L-infinity distance, with an absolute floor so all-zero tensors
// compare equal to themselves.
template <class S>
double rel_linf(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) throw ShapeError("rel_linf: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    double worst = 0.0;
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    for (int64_t i = 0, n = a.numel(); i < n; ++i) {
        double da = static_cast<double>(pa[i]);
        double db = static_cast<double>(pb[i]);
        double denom = std::max({std::abs(da), std::abs(db), 1.0});
        worst = std::max(worst, std::abs(da - db) / denom);
    }
    return worst;
}

// PCG32: small deterministic generator so corpora and training runs are
// bit-reproducible independent of the standard library implementation.
class Pcg32 {
public:
    explicit Pcg32(uint64_t seed = 0x853c49e6748fea9bULL, uint64_t stream = 0xda3e39cb94b95bdbULL) {
        state_ = 0;
        inc_ = (stream << 1u) | 1u;
        next();
        state_ += seed;
        next();
    }

    uint32_t next() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    // uniform in [0, 1)
    double uniform() { return next() * (1.0 / 4294967296.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t lo, int64_t hi_inclusive) {
        return lo + static_cast<int64_t>(uniform() * static_cast<double>(hi_inclusive - lo + 1));
    }

    // Box-Muller; one value per call keeps the stream position predictable.
    double gaussian() {
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 1e-12);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 0;
};

template <class S>
Tensor<S> random_normal(Shape4 shape, Pcg32& rng, double stddev = 1.0) {
    Tensor<S> t(shape);
    S* p = t.mut();
    for (int64_t i = 0, n = t.numel(); i < n; ++i) p[i] = static_cast<S>(rng.gaussian() * stddev);
    return t;
}

template <class S>
Tensor<S> random_uniform(Shape4 shape, Pcg32& rng, double lo = 0.0, double hi = 1.0) {
    Tensor<S> t(shape);
    S* p = t.mut();
    for (int64_t i = 0, n = t.numel(); i < n; ++i) p[i] = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

}  // namespace rvd
