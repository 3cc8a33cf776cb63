#pragma once

#include <string>

#include "revdeblur/ops.hpp"

// Building blocks shared by the encoder, the sub-decoders and the degradation
// classifier. Every block maps (b,c,h,w) -> (b,c,h,w) except the explicit
// up/down sampling modules. Residual scales are zero-initialized, so freshly
// created blocks start as identities.
namespace rvd {

struct BlockConfig {
    int64_t channels = 0;
    double expansion = 2.0;
    int kernel = 3;

    int64_t expanded() const {
        double e = expansion * static_cast<double>(channels);
        auto n = static_cast<int64_t>(e);
        if (static_cast<double>(n) != e || n <= 0)
            throw ShapeError("block expansion must give an integral channel count");
        return n;
    }
};

namespace init {

template <class S>
Tensor<S> conv_weight(Shape4 shape, Pcg32& rng) {
    double fan_in = static_cast<double>(shape.c * shape.h * shape.w);
    return random_normal<S>(shape, rng, std::sqrt(2.0 / fan_in));
}

}  // namespace init

template <class S>
struct Conv {
    Parameter<S>* w = nullptr;
    Parameter<S>* b = nullptr;

    static Conv create(ParamStore<S>& ps, const std::string& prefix, int64_t out_c, int64_t in_c, int k,
                       Pcg32& rng, int groups = 1, bool zero_init = false) {
        Conv c;
        Shape4 ws(out_c, in_c / groups, k, k);
        c.w = &ps.add(prefix + ".w", zero_init ? Tensor<S>(ws) : init::conv_weight<S>(ws, rng));
        c.b = &ps.add(prefix + ".b", Tensor<S>(Shape4(1, out_c, 1, 1)));
        return c;
    }

    Var<S> same(Tape<S>& t, Var<S> x, int groups = 1) const {
        return ops::conv2d_same(x, t.param(*w), std::optional<Var<S>>(t.param(*b)), groups);
    }

    Var<S> strided(Tape<S>& t, Var<S> x, int stride, int pad, int groups = 1) const {
        return ops::conv2d(x, t.param(*w), std::optional<Var<S>>(t.param(*b)), stride, pad, groups);
    }
};

template <class S>
struct LayerNormParams {
    Parameter<S>* gamma = nullptr;
    Parameter<S>* beta = nullptr;

    static LayerNormParams create(ParamStore<S>& ps, const std::string& prefix, int64_t c) {
        LayerNormParams ln;
        ln.gamma = &ps.add(prefix + ".g", Tensor<S>::full(Shape4(1, c, 1, 1), S(1)));
        ln.beta = &ps.add(prefix + ".b", Tensor<S>(Shape4(1, c, 1, 1)));
        return ln;
    }

    Var<S> apply(Tape<S>& t, Var<S> x) const { return ops::layer_norm(x, t.param(*gamma), t.param(*beta)); }
};

// SimpleGate: split channels in half, multiply the halves.
template <class S>
Var<S> simple_gate(Var<S> x) {
    auto [a, b] = ops::split2(x);
    return ops::mul(a, b);
}

// Simplified channel attention: GAP -> 1x1 conv -> rescale.
template <class S>
struct Sca {
    Conv<S> conv;

    static Sca create(ParamStore<S>& ps, const std::string& prefix, int64_t c, Pcg32& rng) {
        return Sca{Conv<S>::create(ps, prefix, c, c, 1, rng)};
    }

    Var<S> apply(Tape<S>& t, Var<S> x) const {
        Var<S> s = ops::global_avg_pool(x);
        s = conv.same(t, s);
        return ops::spatial_mul(x, s);
    }
};

// Real-FFT channel mixer: RFFT2d -> 1x1 conv -> GELU -> 1x1 conv -> IRFFT2d.
// The two mixes act on the stacked Re/Im channel pairs. linear_mode skips the
// GELU so the identity configuration is exactly the transform round trip.
template <class S>
struct FourierConv {
    Conv<S> mix1;
    Conv<S> mix2;

    static FourierConv create(ParamStore<S>& ps, const std::string& prefix, int64_t c, Pcg32& rng) {
        FourierConv f;
        f.mix1 = Conv<S>::create(ps, prefix + ".mix1", 2 * c, 2 * c, 1, rng);
        f.mix2 = Conv<S>::create(ps, prefix + ".mix2", 2 * c, 2 * c, 1, rng);
        return f;
    }

    Var<S> apply(Tape<S>& t, Var<S> x, bool linear_mode = false) const {
        int64_t w = x.shape().w;
        Var<S> f = ops::rfft2(x);
        f = mix1.same(t, f);
        if (!linear_mode) f = ops::gelu(f);
        f = mix2.same(t, f);
        return ops::irfft2(f, w);
    }
};

// NAF-style block; with_fourier adds the frequency branch, summed into the
// spatial path before the final 1x1 projection.
template <class S>
struct NafBlock {
    BlockConfig cfg;
    bool with_fourier = false;
    LayerNormParams<S> ln1, ln2;
    Conv<S> expand1, dwconv, project1;
    Sca<S> sca;
    Conv<S> ffn_in, ffn_out;
    Parameter<S>* beta = nullptr;
    Parameter<S>* gamma = nullptr;
    FourierConv<S> fourier;

    static NafBlock create(ParamStore<S>& ps, const std::string& prefix, BlockConfig cfg, Pcg32& rng,
                           bool with_fourier = false) {
        NafBlock nb;
        nb.cfg = cfg;
        nb.with_fourier = with_fourier;
        int64_t c = cfg.channels;
        int64_t e = cfg.expanded();
        nb.ln1 = LayerNormParams<S>::create(ps, prefix + ".ln1", c);
        nb.expand1 = Conv<S>::create(ps, prefix + ".conv1", e, c, 1, rng);
        nb.dwconv = Conv<S>::create(ps, prefix + ".dw", e, e, cfg.kernel, rng, static_cast<int>(e));
        nb.sca = Sca<S>::create(ps, prefix + ".sca", e / 2, rng);
        nb.project1 = Conv<S>::create(ps, prefix + ".conv3", c, e / 2, 1, rng);
        nb.ln2 = LayerNormParams<S>::create(ps, prefix + ".ln2", c);
        nb.ffn_in = Conv<S>::create(ps, prefix + ".conv4", e, c, 1, rng);
        nb.ffn_out = Conv<S>::create(ps, prefix + ".conv5", c, e / 2, 1, rng);
        nb.beta = &ps.add(prefix + ".beta", Tensor<S>(Shape4(1, c, 1, 1)));
        nb.gamma = &ps.add(prefix + ".gamma", Tensor<S>(Shape4(1, c, 1, 1)));
        if (with_fourier) nb.fourier = FourierConv<S>::create(ps, prefix + ".freq", c, rng);
        return nb;
    }

    Var<S> apply(Tape<S>& t, Var<S> x) const {
        Var<S> u = ln1.apply(t, x);
        Var<S> v = expand1.same(t, u);
        v = dwconv.same(t, v, static_cast<int>(cfg.expanded()));
        v = simple_gate(v);
        v = sca.apply(t, v);
        if (with_fourier) v = ops::add(v, fourier.apply(t, u));
        v = project1.same(t, v);
        Var<S> y = ops::add(x, ops::cmul(v, t.param(*beta)));

        Var<S> u2 = ln2.apply(t, y);
        Var<S> w = ffn_in.same(t, u2);
        w = simple_gate(w);
        w = ffn_out.same(t, w);
        return ops::add(y, ops::cmul(w, t.param(*gamma)));
    }
};

// Cross-column fusion; consumes the coarser same-column feature (2c, h/2,
// w/2) and, above Level 1, the finer previous-column feature (c/2, 2h, 2w).
template <class S>
struct FuseBlock {
    int64_t channels = 0;
    bool has_down = false;
    Conv<S> up;    // 1x1 to 4c before pixel shuffle
    Conv<S> down;  // stride-2 conv from the finer scale
    Sca<S> sca;
    Conv<S> out;

    static FuseBlock create(ParamStore<S>& ps, const std::string& prefix, int64_t c, bool has_down,
                            Pcg32& rng) {
        FuseBlock f;
        f.channels = c;
        f.has_down = has_down;
        f.up = Conv<S>::create(ps, prefix + ".up", 4 * c, 2 * c, 1, rng);
        if (has_down) f.down = Conv<S>::create(ps, prefix + ".down", c, c / 2, 2, rng);
        int64_t cc = has_down ? 2 * c : c;
        f.sca = Sca<S>::create(ps, prefix + ".sca", cc, rng);
        // Zero-init the projection: a fresh Level module contributes nothing,
        // so stacked columns start as bounded identity chains.
        f.out = Conv<S>::create(ps, prefix + ".out", c, cc, 1, rng, 1, true);
        return f;
    }

    Var<S> apply(Tape<S>& t, Var<S> neighbor_up, const Var<S>* neighbor_down) const {
        if (has_down != (neighbor_down != nullptr))
            throw ShapeError("fuse_block: neighbor_down presence does not match block configuration");
        Var<S> u = ops::pixel_shuffle2(up.same(t, neighbor_up));
        Var<S> z = u;
        if (neighbor_down) {
            Var<S> d = down.strided(t, *neighbor_down, 2, 0);
            z = ops::concat2(u, d);
        }
        z = sca.apply(t, z);
        return out.same(t, z);
    }
};

// Encoder downsampling: stride-2 conv, channels double, spatial halves.
template <class S>
struct Downsample {
    Conv<S> conv;

    static Downsample create(ParamStore<S>& ps, const std::string& prefix, int64_t c, Pcg32& rng) {
        return Downsample{Conv<S>::create(ps, prefix, 2 * c, c, 2, rng)};
    }

    Var<S> apply(Tape<S>& t, Var<S> x) const {
        if (x.shape().h % 2 != 0 || x.shape().w % 2 != 0)
            throw ShapeError("downsample requires even spatial dims, got " + x.shape().str());
        return conv.strided(t, x, 2, 0);
    }
};

// Pixel-shuffle upsampling: channels halve, spatial doubles.
template <class S>
struct Upsample {
    Conv<S> conv;

    static Upsample create(ParamStore<S>& ps, const std::string& prefix, int64_t c, Pcg32& rng) {
        return Upsample{Conv<S>::create(ps, prefix, 2 * c, c, 1, rng)};
    }

    Var<S> apply(Tape<S>& t, Var<S> x) const { return ops::pixel_shuffle2(conv.same(t, x)); }
};

}  // namespace rvd
