#pragma once

#include <optional>

#include "revdeblur/fft.hpp"
#include "revdeblur/tape.hpp"

// Taped tensor ops. Each op computes its output eagerly and records a node
// whose `needs` lists exactly the slots its backward reads; that list is what
// the memory accounting charges as saved-for-backward.
namespace rvd::ops {

namespace detail {

template <class S>
void expect(bool ok, const char* op, const std::string& msg) {
    if (!ok) throw ShapeError(std::string(op) + ": " + msg);
}

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution. Weight layout (out_channels, in_channels/groups, k, k).
// stride 1 with symmetric padding or stride 2; groups == in_channels gives a
// depthwise convolution.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> conv2d_raw(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias, int stride, int pad,
                     int groups) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    int64_t in_per = xs.c / groups;
    int64_t out_per = ws.b / groups;
    int64_t oh = detail::conv_out_dim(xs.h, ws.h, stride, pad);
    int64_t ow = detail::conv_out_dim(xs.w, ws.w, stride, pad);
    Tensor<S> out(Shape4(xs.b, ws.b, oh, ow));

    const S* xp = x.ptr();
    const S* wp = w.ptr();
    S* op = out.mut();
    int64_t k = ws.h;

    if (k == 1 && stride == 1 && pad == 0 && groups == 1) {
        // 1x1 convolutions are per-pixel channel mixes; keep this path tight.
        int64_t hw = xs.h * xs.w;
        for (int64_t b = 0; b < xs.b; ++b) {
            const S* xb = xp + b * xs.c * hw;
            for (int64_t oc = 0; oc < ws.b; ++oc) {
                S* orow = op + (b * ws.b + oc) * hw;
                S bv = bias ? bias->ptr()[oc] : S(0);
                for (int64_t i = 0; i < hw; ++i) orow[i] = bv;
                const S* wrow = wp + oc * xs.c;
                for (int64_t ic = 0; ic < xs.c; ++ic) {
                    S wv = wrow[ic];
                    if (wv == S(0)) continue;
                    const S* xrow = xb + ic * hw;
                    for (int64_t i = 0; i < hw; ++i) orow[i] += wv * xrow[i];
                }
            }
        }
        return out;
    }

    for (int64_t b = 0; b < xs.b; ++b) {
        for (int64_t oc = 0; oc < ws.b; ++oc) {
            int64_t g = oc / out_per;
            int64_t ic0 = g * in_per;
            S bv = bias ? bias->ptr()[oc] : S(0);
            for (int64_t y = 0; y < oh; ++y) {
                S* orow = op + ((b * ws.b + oc) * oh + y) * ow;
                for (int64_t xo = 0; xo < ow; ++xo) orow[xo] = bv;
                for (int64_t icg = 0; icg < in_per; ++icg) {
                    const S* xc = xp + (b * xs.c + ic0 + icg) * xs.h * xs.w;
                    const S* wc = wp + (oc * in_per + icg) * k * k;
                    for (int64_t kh = 0; kh < k; ++kh) {
                        int64_t iy = y * stride - pad + kh;
                        if (iy < 0 || iy >= xs.h) continue;
                        const S* xrow = xc + iy * xs.w;
                        const S* wrow = wc + kh * k;
                        for (int64_t xo = 0; xo < ow; ++xo) {
                            int64_t base = xo * stride - pad;
                            S acc = 0;
                            int64_t kw0 = std::max<int64_t>(0, -base);
                            int64_t kw1 = std::min<int64_t>(k, xs.w - base);
                            for (int64_t kw = kw0; kw < kw1; ++kw) acc += wrow[kw] * xrow[base + kw];
                            orow[xo] += acc;
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <class S>
Var<S> conv2d(Var<S> x, Var<S> w, std::optional<Var<S>> bias, int stride, int pad, int groups = 1) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    detail::expect<S>(ws.h == ws.w, "conv2d", "kernel must be square, got " + ws.str());
    detail::expect<S>(xs.c % groups == 0 && ws.b % groups == 0, "conv2d", "channels not divisible by groups");
    detail::expect<S>(ws.c == xs.c / groups, "conv2d",
                      "weight expects " + std::to_string(ws.c) + " input channels per group, input has " +
                          std::to_string(xs.c / groups));
    detail::expect<S>(stride == 1 || stride == 2, "conv2d", "stride must be 1 or 2");
    if (bias)
        detail::expect<S>(bias->shape() == Shape4(1, ws.b, 1, 1), "conv2d",
                          "bias shape " + bias->shape().str());

    const Tensor<S>* bp = nullptr;
    Tensor<S> bval;
    if (bias) {
        bval = t.val(*bias);
        bp = &bval;
    }
    Tensor<S> out = conv2d_raw(t.val(x), t.val(w), bp, stride, pad, groups);

    std::vector<int> ins{x.id, w.id};
    if (bias) ins.push_back(bias->id);
    int xid = x.id, wid = w.id;
    int bid = bias ? bias->id : -1;
    return t.emit("conv2d", ins, std::move(out), {x.id, w.id},
                  [xid, wid, bid, stride, pad, groups](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& gy = tp.grad_ref(n.outs[0]);
                      const Tensor<S>& xv = tp.val(xid);
                      const Tensor<S>& wv = tp.val(wid);
                      const auto& xs2 = xv.shape();
                      const auto& ws2 = wv.shape();
                      const auto& gs = gy.shape();
                      int64_t in_per = xs2.c / groups;
                      int64_t out_per = ws2.b / groups;
                      int64_t k = ws2.h;

                      Tensor<S> gx(xs2);
                      Tensor<S> gw(ws2);
                      const S* gyp = gy.ptr();
                      const S* xp2 = xv.ptr();
                      const S* wp2 = wv.ptr();
                      S* gxp = gx.mut();
                      S* gwp = gw.mut();

                      for (int64_t b = 0; b < xs2.b; ++b) {
                          for (int64_t oc = 0; oc < ws2.b; ++oc) {
                              int64_t g = oc / out_per;
                              int64_t ic0 = g * in_per;
                              for (int64_t y = 0; y < gs.h; ++y) {
                                  const S* grow = gyp + ((b * ws2.b + oc) * gs.h + y) * gs.w;
                                  for (int64_t icg = 0; icg < in_per; ++icg) {
                                      S* gxc = gxp + (b * xs2.c + ic0 + icg) * xs2.h * xs2.w;
                                      const S* xc = xp2 + (b * xs2.c + ic0 + icg) * xs2.h * xs2.w;
                                      S* gwc = gwp + (oc * in_per + icg) * k * k;
                                      const S* wc = wp2 + (oc * in_per + icg) * k * k;
                                      for (int64_t kh = 0; kh < k; ++kh) {
                                          int64_t iy = y * stride - pad + kh;
                                          if (iy < 0 || iy >= xs2.h) continue;
                                          for (int64_t xo = 0; xo < gs.w; ++xo) {
                                              int64_t ix = xo * stride - pad;
                                              S gv = grow[xo];
                                              if (gv == S(0)) continue;
                                              int64_t kw0 = std::max<int64_t>(0, -ix);
                                              int64_t kw1 = std::min<int64_t>(k, xs2.w - ix);
                                              const S* xr = xc + iy * xs2.w + ix;
                                              S* gxr = gxc + iy * xs2.w + ix;
                                              for (int64_t kw = kw0; kw < kw1; ++kw) {
                                                  gwc[kh * k + kw] += gv * xr[kw];
                                                  gxr[kw] += gv * wc[kh * k + kw];
                                              }
                                          }
                                      }
                                  }
                              }
                          }
                      }
                      tp.add_grad(xid, gx);
                      tp.add_grad(wid, gw);
                      if (bid >= 0) {
                          Tensor<S> gb(Shape4(1, ws2.b, 1, 1));
                          S* gbp = gb.mut();
                          for (int64_t b = 0; b < gs.b; ++b)
                              for (int64_t oc = 0; oc < gs.c; ++oc) {
                                  const S* grow = gyp + (b * gs.c + oc) * gs.h * gs.w;
                                  S acc = 0;
                                  for (int64_t i = 0; i < gs.h * gs.w; ++i) acc += grow[i];
                                  gbp[oc] += acc;
                              }
                          tp.add_grad(bid, gb);
                      }
                  });
}

template <class S>
Var<S> conv2d_same(Var<S> x, Var<S> w, std::optional<Var<S>> bias, int groups = 1) {
    int k = static_cast<int>(w.shape().h);
    return conv2d(x, w, bias, 1, (k - 1) / 2, groups);
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    detail::expect<S>(a.shape() == b.shape(), "add", a.shape().str() + " vs " + b.shape().str());
    const Tensor<S>& av = t.val(a);
    const Tensor<S>& bv = t.val(b);
    Tensor<S> out(av.shape());
    S* o = out.mut();
    const S* pa = av.ptr();
    const S* pb = bv.ptr();
    for (int64_t i = 0, n = out.numel(); i < n; ++i) o[i] = pa[i] + pb[i];
    int aid = a.id, bid = b.id;
    return t.emit("add", {aid, bid}, std::move(out), {},
                  [aid, bid](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      tp.add_grad(aid, tp.grad_ref(n.outs[0]));
                      tp.add_grad(bid, tp.grad_ref(n.outs[0]));
                  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    detail::expect<S>(a.shape() == b.shape(), "sub", a.shape().str() + " vs " + b.shape().str());
    const Tensor<S>& av = t.val(a);
    const Tensor<S>& bv = t.val(b);
    Tensor<S> out(av.shape());
    S* o = out.mut();
    const S* pa = av.ptr();
    const S* pb = bv.ptr();
    for (int64_t i = 0, n = out.numel(); i < n; ++i) o[i] = pa[i] - pb[i];
    int aid = a.id, bid = b.id;
    return t.emit("sub", {aid, bid}, std::move(out), {},
                  [aid, bid](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      tp.add_grad(aid, g);
                      Tensor<S> neg(g.shape());
                      S* np = neg.mut();
                      const S* gp = g.ptr();
                      for (int64_t i = 0, m = g.numel(); i < m; ++i) np[i] = -gp[i];
                      tp.add_grad(bid, neg);
                  });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    detail::expect<S>(a.shape() == b.shape(), "mul", a.shape().str() + " vs " + b.shape().str());
    const Tensor<S>& av = t.val(a);
    const Tensor<S>& bv = t.val(b);
    Tensor<S> out(av.shape());
    S* o = out.mut();
    const S* pa = av.ptr();
    const S* pb = bv.ptr();
    for (int64_t i = 0, n = out.numel(); i < n; ++i) o[i] = pa[i] * pb[i];
    int aid = a.id, bid = b.id;
    return t.emit("mul", {aid, bid}, std::move(out), {aid, bid},
                  [aid, bid](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const Tensor<S>& av2 = tp.val(aid);
                      const Tensor<S>& bv2 = tp.val(bid);
                      Tensor<S> ga(av2.shape()), gb(bv2.shape());
                      const S* gp = g.ptr();
                      S* gap = ga.mut();
                      S* gbp = gb.mut();
                      const S* ap = av2.ptr();
                      const S* bp = bv2.ptr();
                      for (int64_t i = 0, m = g.numel(); i < m; ++i) {
                          gap[i] = gp[i] * bp[i];
                          gbp[i] = gp[i] * ap[i];
                      }
                      tp.add_grad(aid, ga);
                      tp.add_grad(bid, gb);
                  });
}

// Broadcast multiply by a per-channel (1,c,1,1) or scalar (1,1,1,1) factor.
template <class S>
Var<S> cmul(Var<S> x, Var<S> p) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    const auto& ps = p.shape();
    bool scalar = ps == Shape4(1, 1, 1, 1);
    detail::expect<S>(scalar || ps == Shape4(1, xs.c, 1, 1), "cmul",
                      "factor must be scalar or per-channel, got " + ps.str());
    const Tensor<S>& xv = t.val(x);
    const Tensor<S>& pv = t.val(p);
    Tensor<S> out(xs);
    const S* xp = xv.ptr();
    const S* pp = pv.ptr();
    S* op = out.mut();
    int64_t hw = xs.h * xs.w;
    for (int64_t b = 0; b < xs.b; ++b)
        for (int64_t c = 0; c < xs.c; ++c) {
            S f = scalar ? pp[0] : pp[c];
            const S* xr = xp + (b * xs.c + c) * hw;
            S* orow = op + (b * xs.c + c) * hw;
            for (int64_t i = 0; i < hw; ++i) orow[i] = xr[i] * f;
        }
    int xid = x.id, pid = p.id;
    return t.emit("cmul", {xid, pid}, std::move(out), {xid, pid},
                  [xid, pid, scalar](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const Tensor<S>& xv2 = tp.val(xid);
                      const Tensor<S>& pv2 = tp.val(pid);
                      const auto& xs2 = xv2.shape();
                      Tensor<S> gx(xs2);
                      Tensor<S> gp(pv2.shape());
                      const S* gr = g.ptr();
                      const S* xr = xv2.ptr();
                      const S* pr = pv2.ptr();
                      S* gxp = gx.mut();
                      S* gpp = gp.mut();
                      int64_t hw = xs2.h * xs2.w;
                      for (int64_t b = 0; b < xs2.b; ++b)
                          for (int64_t c = 0; c < xs2.c; ++c) {
                              S f = scalar ? pr[0] : pr[c];
                              int64_t base = (b * xs2.c + c) * hw;
                              S acc = 0;
                              for (int64_t i = 0; i < hw; ++i) {
                                  gxp[base + i] = gr[base + i] * f;
                                  acc += gr[base + i] * xr[base + i];
                              }
                              gpp[scalar ? 0 : c] += acc;
                          }
                      tp.add_grad(xid, gx);
                      tp.add_grad(pid, gp);
                  });
}

// Per-sample channel attention: x (b,c,h,w) scaled by s (b,c,1,1).
template <class S>
Var<S> spatial_mul(Var<S> x, Var<S> s) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    detail::expect<S>(s.shape() == Shape4(xs.b, xs.c, 1, 1), "spatial_mul",
                      "scale shape " + s.shape().str() + " for input " + xs.str());
    const Tensor<S>& xv = t.val(x);
    const Tensor<S>& sv = t.val(s);
    Tensor<S> out(xs);
    const S* xp = xv.ptr();
    const S* sp = sv.ptr();
    S* op = out.mut();
    int64_t hw = xs.h * xs.w;
    for (int64_t b = 0; b < xs.b; ++b)
        for (int64_t c = 0; c < xs.c; ++c) {
            S f = sp[b * xs.c + c];
            int64_t base = (b * xs.c + c) * hw;
            for (int64_t i = 0; i < hw; ++i) op[base + i] = xp[base + i] * f;
        }
    int xid = x.id, sid = s.id;
    return t.emit("spatial_mul", {xid, sid}, std::move(out), {xid, sid},
                  [xid, sid](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const Tensor<S>& xv2 = tp.val(xid);
                      const Tensor<S>& sv2 = tp.val(sid);
                      const auto& xs2 = xv2.shape();
                      Tensor<S> gx(xs2);
                      Tensor<S> gs(sv2.shape());
                      const S* gp = g.ptr();
                      const S* xp2 = xv2.ptr();
                      const S* sp2 = sv2.ptr();
                      S* gxp = gx.mut();
                      S* gsp = gs.mut();
                      int64_t hw = xs2.h * xs2.w;
                      for (int64_t b = 0; b < xs2.b; ++b)
                          for (int64_t c = 0; c < xs2.c; ++c) {
                              int64_t base = (b * xs2.c + c) * hw;
                              S f = sp2[b * xs2.c + c];
                              S acc = 0;
                              for (int64_t i = 0; i < hw; ++i) {
                                  gxp[base + i] = gp[base + i] * f;
                                  acc += gp[base + i] * xp2[base + i];
                              }
                              gsp[b * xs2.c + c] = acc;
                          }
                      tp.add_grad(xid, gx);
                      tp.add_grad(sid, gs);
                  });
}

template <class S>
Var<S> add_bias(Var<S> x, Var<S> bias) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    detail::expect<S>(bias.shape() == Shape4(1, xs.c, 1, 1), "add_bias", "bias shape " + bias.shape().str());
    const Tensor<S>& xv = t.val(x);
    const Tensor<S>& bv = t.val(bias);
    Tensor<S> out(xs);
    const S* xp = xv.ptr();
    const S* bp = bv.ptr();
    S* op = out.mut();
    int64_t hw = xs.h * xs.w;
    for (int64_t b = 0; b < xs.b; ++b)
        for (int64_t c = 0; c < xs.c; ++c) {
            int64_t base = (b * xs.c + c) * hw;
            for (int64_t i = 0; i < hw; ++i) op[base + i] = xp[base + i] + bp[c];
        }
    int xid = x.id, bid = bias.id;
    return t.emit("add_bias", {xid, bid}, std::move(out), {},
                  [xid, bid](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      tp.add_grad(xid, g);
                      const auto& gs = g.shape();
                      Tensor<S> gb(Shape4(1, gs.c, 1, 1));
                      S* gbp = gb.mut();
                      const S* gp = g.ptr();
                      int64_t hw = gs.h * gs.w;
                      for (int64_t b = 0; b < gs.b; ++b)
                          for (int64_t c = 0; c < gs.c; ++c) {
                              const S* row = gp + (b * gs.c + c) * hw;
                              S acc = 0;
                              for (int64_t i = 0; i < hw; ++i) acc += row[i];
                              gbp[c] += acc;
                          }
                      tp.add_grad(bid, gb);
                  });
}

template <class S>
Var<S> scale(Var<S> x, double k) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = t.val(x);
    Tensor<S> out(xv.shape());
    const S* xp = xv.ptr();
    S* op = out.mut();
    S ks = static_cast<S>(k);
    for (int64_t i = 0, n = out.numel(); i < n; ++i) op[i] = xp[i] * ks;
    int xid = x.id;
    return t.emit("scale", {xid}, std::move(out), {},
                  [xid, ks](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      Tensor<S> gx(g.shape());
                      const S* gp = g.ptr();
                      S* gxp = gx.mut();
                      for (int64_t i = 0, m = g.numel(); i < m; ++i) gxp[i] = gp[i] * ks;
                      tp.add_grad(xid, gx);
                  });
}

// ---------------------------------------------------------------------------
// Activations and normalization
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;
}  // namespace detail

// tanh-approximation GELU; the constant is part of the contract so reference
// implementations agree.
template <class S>
Var<S> gelu(Var<S> x) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = t.val(x);
    Tensor<S> out(xv.shape());
    const S* xp = xv.ptr();
    S* op = out.mut();
    for (int64_t i = 0, n = out.numel(); i < n; ++i) {
        double v = static_cast<double>(xp[i]);
        double u = detail::kGeluK * (v + detail::kGeluA * v * v * v);
        op[i] = static_cast<S>(0.5 * v * (1.0 + std::tanh(u)));
    }
    int xid = x.id;
    return t.emit("gelu", {xid}, std::move(out), {xid},
                  [xid](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const Tensor<S>& xv2 = tp.val(xid);
                      Tensor<S> gx(xv2.shape());
                      const S* gp = g.ptr();
                      const S* xp2 = xv2.ptr();
                      S* gxp = gx.mut();
                      for (int64_t i = 0, m = g.numel(); i < m; ++i) {
                          double v = static_cast<double>(xp2[i]);
                          double u = detail::kGeluK * (v + detail::kGeluA * v * v * v);
                          double th = std::tanh(u);
                          double sech2 = 1.0 - th * th;
                          double du = detail::kGeluK * (1.0 + 3.0 * detail::kGeluA * v * v);
                          double d = 0.5 * (1.0 + th) + 0.5 * v * sech2 * du;
                          gxp[i] = static_cast<S>(static_cast<double>(gp[i]) * d);
                      }
                      tp.add_grad(xid, gx);
                  });
}

// LayerNorm across the channel dimension at every (b,h,w) position.
template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, double eps = 1e-6) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    detail::expect<S>(gamma.shape() == Shape4(1, xs.c, 1, 1) && beta.shape() == Shape4(1, xs.c, 1, 1),
                      "layer_norm", "affine params must be per-channel");
    const Tensor<S>& xv = t.val(x);
    const Tensor<S>& gv = t.val(gamma);
    const Tensor<S>& bv = t.val(beta);
    Tensor<S> out(xs);
    const S* xp = xv.ptr();
    const S* gp = gv.ptr();
    const S* bp = bv.ptr();
    S* op = out.mut();
    int64_t hw = xs.h * xs.w;
    double invc = 1.0 / static_cast<double>(xs.c);
    for (int64_t b = 0; b < xs.b; ++b) {
        const S* xb = xp + b * xs.c * hw;
        S* ob = op + b * xs.c * hw;
        for (int64_t i = 0; i < hw; ++i) {
            double mean = 0;
            for (int64_t c = 0; c < xs.c; ++c) mean += xb[c * hw + i];
            mean *= invc;
            double var = 0;
            for (int64_t c = 0; c < xs.c; ++c) {
                double d = xb[c * hw + i] - mean;
                var += d * d;
            }
            var *= invc;
            double r = 1.0 / std::sqrt(var + eps);
            for (int64_t c = 0; c < xs.c; ++c)
                ob[c * hw + i] = static_cast<S>((xb[c * hw + i] - mean) * r * gp[c] + bp[c]);
        }
    }
    int xid = x.id, gid = gamma.id, bid = beta.id;
    return t.emit(
        "layer_norm", {xid, gid, bid}, std::move(out), {xid, gid},
        [xid, gid, bid, eps](Tape<S>& tp, const typename Tape<S>::Node& n) {
            const Tensor<S>& g = tp.grad_ref(n.outs[0]);
            const Tensor<S>& xv2 = tp.val(xid);
            const Tensor<S>& gv2 = tp.val(gid);
            const auto& xs2 = xv2.shape();
            Tensor<S> gx(xs2);
            Tensor<S> gg(Shape4(1, xs2.c, 1, 1));
            Tensor<S> gb(Shape4(1, xs2.c, 1, 1));
            const S* xp2 = xv2.ptr();
            const S* gmp = gv2.ptr();
            const S* gyp = g.ptr();
            S* gxp = gx.mut();
            S* ggp = gg.mut();
            S* gbp = gb.mut();
            int64_t hw = xs2.h * xs2.w;
            double invc = 1.0 / static_cast<double>(xs2.c);
            std::vector<double> xhat(static_cast<size_t>(xs2.c)), gh(static_cast<size_t>(xs2.c));
            for (int64_t b = 0; b < xs2.b; ++b) {
                const S* xb = xp2 + b * xs2.c * hw;
                const S* gyb = gyp + b * xs2.c * hw;
                S* gxb = gxp + b * xs2.c * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    double mean = 0;
                    for (int64_t c = 0; c < xs2.c; ++c) mean += xb[c * hw + i];
                    mean *= invc;
                    double var = 0;
                    for (int64_t c = 0; c < xs2.c; ++c) {
                        double d = xb[c * hw + i] - mean;
                        var += d * d;
                    }
                    var *= invc;
                    double r = 1.0 / std::sqrt(var + eps);
                    double mean_gh = 0, mean_ghx = 0;
                    for (int64_t c = 0; c < xs2.c; ++c) {
                        xhat[static_cast<size_t>(c)] = (xb[c * hw + i] - mean) * r;
                        gh[static_cast<size_t>(c)] = static_cast<double>(gyb[c * hw + i]) * gmp[c];
                        mean_gh += gh[static_cast<size_t>(c)];
                        mean_ghx += gh[static_cast<size_t>(c)] * xhat[static_cast<size_t>(c)];
                        ggp[c] += static_cast<S>(static_cast<double>(gyb[c * hw + i]) * xhat[static_cast<size_t>(c)]);
                        gbp[c] += gyb[c * hw + i];
                    }
                    mean_gh *= invc;
                    mean_ghx *= invc;
                    for (int64_t c = 0; c < xs2.c; ++c)
                        gxb[c * hw + i] = static_cast<S>(
                            r * (gh[static_cast<size_t>(c)] - mean_gh - xhat[static_cast<size_t>(c)] * mean_ghx));
                }
            }
            tp.add_grad(xid, gx);
            tp.add_grad(gid, gg);
            tp.add_grad(bid, gb);
        });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class S>
std::pair<Var<S>, Var<S>> split2(Var<S> x) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    detail::expect<S>(xs.c % 2 == 0, "split2", "channel count must be even, got " + xs.str());
    const Tensor<S>& xv = t.val(x);
    int64_t half = xs.c / 2;
    Shape4 hs(xs.b, half, xs.h, xs.w);
    Tensor<S> a(hs), b(hs);
    int64_t hw = xs.h * xs.w;
    for (int64_t bb = 0; bb < xs.b; ++bb) {
        std::memcpy(a.mut() + bb * half * hw, xv.ptr() + (bb * xs.c) * hw,
                    static_cast<size_t>(half * hw) * sizeof(S));
        std::memcpy(b.mut() + bb * half * hw, xv.ptr() + (bb * xs.c + half) * hw,
                    static_cast<size_t>(half * hw) * sizeof(S));
    }
    int xid = x.id;
    return t.emit2("split2", {xid}, std::move(a), std::move(b), {},
                   [xid, half, hw](Tape<S>& tp, const typename Tape<S>::Node& n) {
                       const auto& xs2 = tp.shape_of(xid);
                       Tensor<S> gx(xs2);
                       S* gxp = gx.mut();
                       for (int h = 0; h < 2; ++h) {
                           if (!tp.has_grad(n.outs[static_cast<size_t>(h)])) continue;
                           const Tensor<S>& g = tp.grad_ref(n.outs[static_cast<size_t>(h)]);
                           const S* gp = g.ptr();
                           for (int64_t bb = 0; bb < xs2.b; ++bb)
                               std::memcpy(gxp + (bb * xs2.c + h * half) * hw, gp + bb * half * hw,
                                           static_cast<size_t>(half * hw) * sizeof(S));
                       }
                       tp.add_grad(xid, gx);
                   });
}

template <class S>
Var<S> concat2(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    const auto& as = a.shape();
    const auto& bs = b.shape();
    detail::expect<S>(as.b == bs.b && as.h == bs.h && as.w == bs.w, "concat2",
                      as.str() + " vs " + bs.str());
    Shape4 os(as.b, as.c + bs.c, as.h, as.w);
    Tensor<S> out(os);
    const Tensor<S>& av = t.val(a);
    const Tensor<S>& bv = t.val(b);
    int64_t hw = as.h * as.w;
    for (int64_t bb = 0; bb < as.b; ++bb) {
        std::memcpy(out.mut() + bb * os.c * hw, av.ptr() + bb * as.c * hw,
                    static_cast<size_t>(as.c * hw) * sizeof(S));
        std::memcpy(out.mut() + (bb * os.c + as.c) * hw, bv.ptr() + bb * bs.c * hw,
                    static_cast<size_t>(bs.c * hw) * sizeof(S));
    }
    int aid = a.id, bid = b.id;
    int64_t ac = as.c, bc = bs.c;
    return t.emit("concat2", {aid, bid}, std::move(out), {},
                  [aid, bid, ac, bc, hw](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const auto& gs = g.shape();
                      Tensor<S> ga(Shape4(gs.b, ac, gs.h, gs.w));
                      Tensor<S> gb(Shape4(gs.b, bc, gs.h, gs.w));
                      for (int64_t bb = 0; bb < gs.b; ++bb) {
                          std::memcpy(ga.mut() + bb * ac * hw, g.ptr() + bb * gs.c * hw,
                                      static_cast<size_t>(ac * hw) * sizeof(S));
                          std::memcpy(gb.mut() + bb * bc * hw, g.ptr() + (bb * gs.c + ac) * hw,
                                      static_cast<size_t>(bc * hw) * sizeof(S));
                      }
                      tp.add_grad(aid, ga);
                      tp.add_grad(bid, gb);
                  });
}

// (b, 4m, h, w) -> (b, m, 2h, 2w); out[b,c,2y+i,2x+j] = in[b, 4c + 2i + j, y, x].
template <class S>
Var<S> pixel_shuffle2(Var<S> x) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    detail::expect<S>(xs.c % 4 == 0, "pixel_shuffle2", "channels must be divisible by 4, got " + xs.str());
    Shape4 os(xs.b, xs.c / 4, xs.h * 2, xs.w * 2);
    const Tensor<S>& xv = t.val(x);
    Tensor<S> out(os);
    for (int64_t b = 0; b < xs.b; ++b)
        for (int64_t c = 0; c < os.c; ++c)
            for (int64_t i = 0; i < 2; ++i)
                for (int64_t j = 0; j < 2; ++j)
                    for (int64_t y = 0; y < xs.h; ++y)
                        for (int64_t xx = 0; xx < xs.w; ++xx)
                            out.at(b, c, 2 * y + i, 2 * xx + j) = xv.at(b, 4 * c + 2 * i + j, y, xx);
    int xid = x.id;
    return t.emit("pixel_shuffle2", {xid}, std::move(out), {},
                  [xid](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const auto& xs2 = tp.shape_of(xid);
                      Tensor<S> gx(xs2);
                      for (int64_t b = 0; b < xs2.b; ++b)
                          for (int64_t c = 0; c < xs2.c / 4; ++c)
                              for (int64_t i = 0; i < 2; ++i)
                                  for (int64_t j = 0; j < 2; ++j)
                                      for (int64_t y = 0; y < xs2.h; ++y)
                                          for (int64_t xx = 0; xx < xs2.w; ++xx)
                                              gx.at(b, 4 * c + 2 * i + j, y, xx) = g.at(b, c, 2 * y + i, 2 * xx + j);
                      tp.add_grad(xid, gx);
                  });
}

template <class S>
Var<S> reflect_pad(Var<S> x, int top, int bottom, int left, int right) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    detail::expect<S>(top < xs.h && bottom < xs.h && left < xs.w && right < xs.w, "reflect_pad",
                      "padding must be smaller than the padded dimension");
    Shape4 os(xs.b, xs.c, xs.h + top + bottom, xs.w + left + right);
    const Tensor<S>& xv = t.val(x);
    Tensor<S> out(os);
    auto mirror = [](int64_t v, int64_t n) {
        if (v < 0) return -v;
        if (v >= n) return 2 * n - 2 - v;
        return v;
    };
    for (int64_t b = 0; b < xs.b; ++b)
        for (int64_t c = 0; c < xs.c; ++c)
            for (int64_t y = 0; y < os.h; ++y) {
                int64_t sy = mirror(y - top, xs.h);
                for (int64_t xx = 0; xx < os.w; ++xx)
                    out.at(b, c, y, xx) = xv.at(b, c, sy, mirror(xx - left, xs.w));
            }
    int xid = x.id;
    return t.emit("reflect_pad", {xid}, std::move(out), {},
                  [xid, top, left, mirror](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const auto& xs2 = tp.shape_of(xid);
                      const auto& gs = g.shape();
                      Tensor<S> gx(xs2);
                      for (int64_t b = 0; b < gs.b; ++b)
                          for (int64_t c = 0; c < gs.c; ++c)
                              for (int64_t y = 0; y < gs.h; ++y) {
                                  int64_t sy = mirror(y - top, xs2.h);
                                  for (int64_t xx = 0; xx < gs.w; ++xx)
                                      gx.at(b, c, sy, mirror(xx - left, xs2.w)) += g.at(b, c, y, xx);
                              }
                      tp.add_grad(xid, gx);
                  });
}

template <class S>
Var<S> crop(Var<S> x, int top, int left, int64_t nh, int64_t nw) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    detail::expect<S>(top + nh <= xs.h && left + nw <= xs.w, "crop", "window exceeds input " + xs.str());
    Shape4 os(xs.b, xs.c, nh, nw);
    const Tensor<S>& xv = t.val(x);
    Tensor<S> out(os);
    for (int64_t b = 0; b < xs.b; ++b)
        for (int64_t c = 0; c < xs.c; ++c)
            for (int64_t y = 0; y < nh; ++y)
                std::memcpy(&out.at(b, c, y, 0), &const_cast<Tensor<S>&>(xv).at(b, c, y + top, left),
                            static_cast<size_t>(nw) * sizeof(S));
    int xid = x.id;
    return t.emit("crop", {xid}, std::move(out), {},
                  [xid, top, left](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const auto& xs2 = tp.shape_of(xid);
                      const auto& gs = g.shape();
                      Tensor<S> gx(xs2);
                      for (int64_t b = 0; b < gs.b; ++b)
                          for (int64_t c = 0; c < gs.c; ++c)
                              for (int64_t y = 0; y < gs.h; ++y)
                                  for (int64_t xx = 0; xx < gs.w; ++xx)
                                      gx.at(b, c, y + top, xx + left) = g.at(b, c, y, xx);
                      tp.add_grad(xid, gx);
                  });
}

// ---------------------------------------------------------------------------
// Reductions and dense layers
// ---------------------------------------------------------------------------

template <class S>
Var<S> global_avg_pool(Var<S> x) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    const Tensor<S>& xv = t.val(x);
    Tensor<S> out(Shape4(xs.b, xs.c, 1, 1));
    const S* xp = xv.ptr();
    S* op = out.mut();
    int64_t hw = xs.h * xs.w;
    double inv = 1.0 / static_cast<double>(hw);
    for (int64_t b = 0; b < xs.b; ++b)
        for (int64_t c = 0; c < xs.c; ++c) {
            const S* row = xp + (b * xs.c + c) * hw;
            double acc = 0;
            for (int64_t i = 0; i < hw; ++i) acc += row[i];
            op[b * xs.c + c] = static_cast<S>(acc * inv);
        }
    int xid = x.id;
    return t.emit("global_avg_pool", {xid}, std::move(out), {},
                  [xid](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const auto& xs2 = tp.shape_of(xid);
                      Tensor<S> gx(xs2);
                      S* gxp = gx.mut();
                      const S* gp = g.ptr();
                      int64_t hw = xs2.h * xs2.w;
                      S inv = static_cast<S>(1.0 / static_cast<double>(hw));
                      for (int64_t b = 0; b < xs2.b; ++b)
                          for (int64_t c = 0; c < xs2.c; ++c) {
                              S v = gp[b * xs2.c + c] * inv;
                              S* row = gxp + (b * xs2.c + c) * hw;
                              for (int64_t i = 0; i < hw; ++i) row[i] = v;
                          }
                      tp.add_grad(xid, gx);
                  });
}

// x: (b, n, 1, 1), w: (m, n, 1, 1), bias: (1, m, 1, 1) -> (b, m, 1, 1)
template <class S>
Var<S> linear(Var<S> x, Var<S> w, std::optional<Var<S>> bias) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    detail::expect<S>(xs.h == 1 && xs.w == 1, "linear", "input must be (b,n,1,1), got " + xs.str());
    detail::expect<S>(ws.c == xs.c && ws.h == 1 && ws.w == 1, "linear", "weight " + ws.str() + " vs input " + xs.str());
    const Tensor<S>& xv = t.val(x);
    const Tensor<S>& wv = t.val(w);
    Tensor<S> out(Shape4(xs.b, ws.b, 1, 1));
    const S* xp = xv.ptr();
    const S* wp = wv.ptr();
    S* op = out.mut();
    for (int64_t b = 0; b < xs.b; ++b)
        for (int64_t m = 0; m < ws.b; ++m) {
            S acc = bias ? t.val(*bias).ptr()[m] : S(0);
            const S* wrow = wp + m * ws.c;
            const S* xrow = xp + b * xs.c;
            for (int64_t k = 0; k < ws.c; ++k) acc += wrow[k] * xrow[k];
            op[b * ws.b + m] = acc;
        }
    std::vector<int> ins{x.id, w.id};
    if (bias) ins.push_back(bias->id);
    int xid = x.id, wid = w.id, bid = bias ? bias->id : -1;
    return t.emit("linear", ins, std::move(out), {xid, wid},
                  [xid, wid, bid](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const Tensor<S>& xv2 = tp.val(xid);
                      const Tensor<S>& wv2 = tp.val(wid);
                      const auto& xs2 = xv2.shape();
                      const auto& ws2 = wv2.shape();
                      Tensor<S> gx(xs2);
                      Tensor<S> gw(ws2);
                      const S* gp = g.ptr();
                      const S* xp2 = xv2.ptr();
                      const S* wp2 = wv2.ptr();
                      S* gxp = gx.mut();
                      S* gwp = gw.mut();
                      for (int64_t b = 0; b < xs2.b; ++b)
                          for (int64_t m = 0; m < ws2.b; ++m) {
                              S gv = gp[b * ws2.b + m];
                              if (gv == S(0)) continue;
                              for (int64_t k = 0; k < ws2.c; ++k) {
                                  gxp[b * xs2.c + k] += gv * wp2[m * ws2.c + k];
                                  gwp[m * ws2.c + k] += gv * xp2[b * xs2.c + k];
                              }
                          }
                      tp.add_grad(xid, gx);
                      tp.add_grad(wid, gw);
                      if (bid >= 0) {
                          Tensor<S> gb(Shape4(1, ws2.b, 1, 1));
                          S* gbp = gb.mut();
                          for (int64_t b = 0; b < xs2.b; ++b)
                              for (int64_t m = 0; m < ws2.b; ++m) gbp[m] += gp[b * ws2.b + m];
                          tp.add_grad(bid, gb);
                      }
                  });
}

template <class S>
Var<S> sum_all(Var<S> x) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = t.val(x);
    double acc = 0;
    const S* xp = xv.ptr();
    for (int64_t i = 0, n = xv.numel(); i < n; ++i) acc += xp[i];
    int xid = x.id;
    return t.emit("sum_all", {xid}, Tensor<S>::scalar(static_cast<S>(acc)), {},
                  [xid](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      S gv = tp.grad_ref(n.outs[0]).ptr()[0];
                      Tensor<S> gx = Tensor<S>::full(tp.shape_of(xid), gv);
                      tp.add_grad(xid, gx);
                  });
}

template <class S>
Var<S> mean_abs(Var<S> x) {
    Tape<S>& t = *x.tape;
    const Tensor<S>& xv = t.val(x);
    double acc = 0;
    const S* xp = xv.ptr();
    int64_t n = xv.numel();
    for (int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(xp[i]));
    int xid = x.id;
    return t.emit("mean_abs", {xid}, Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n))), {xid},
                  [xid](Tape<S>& tp, const typename Tape<S>::Node& nd) {
                      S gv = tp.grad_ref(nd.outs[0]).ptr()[0];
                      const Tensor<S>& xv2 = tp.val(xid);
                      int64_t m = xv2.numel();
                      Tensor<S> gx(xv2.shape());
                      const S* xp2 = xv2.ptr();
                      S* gxp = gx.mut();
                      S k = gv / static_cast<S>(m);
                      for (int64_t i = 0; i < m; ++i) gxp[i] = xp2[i] > S(0) ? k : (xp2[i] < S(0) ? -k : S(0));
                      tp.add_grad(xid, gx);
                  });
}

// Mean softmax cross-entropy over the batch. labels are 0-based.
template <class S>
Var<S> softmax_cross_entropy(Var<S> logits, std::vector<int> labels) {
    Tape<S>& t = *logits.tape;
    const auto& ls = logits.shape();
    detail::expect<S>(ls.h == 1 && ls.w == 1, "softmax_cross_entropy", "logits must be (b,C,1,1)");
    detail::expect<S>(static_cast<int64_t>(labels.size()) == ls.b, "softmax_cross_entropy",
                      "label count mismatch");
    for (int y : labels)
        detail::expect<S>(y >= 0 && y < ls.c, "softmax_cross_entropy",
                          "label " + std::to_string(y) + " out of range for C=" + std::to_string(ls.c));
    const Tensor<S>& lv = t.val(logits);
    const S* lp = lv.ptr();
    double total = 0;
    for (int64_t b = 0; b < ls.b; ++b) {
        const S* row = lp + b * ls.c;
        double mx = row[0];
        for (int64_t c = 1; c < ls.c; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double lse = 0;
        for (int64_t c = 0; c < ls.c; ++c) lse += std::exp(static_cast<double>(row[c]) - mx);
        lse = std::log(lse) + mx;
        total += lse - static_cast<double>(row[labels[static_cast<size_t>(b)]]);
    }
    int lid = logits.id;
    return t.emit("softmax_cross_entropy", {lid},
                  Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(ls.b))), {lid},
                  [lid, labels](Tape<S>& tp, const typename Tape<S>::Node& nd) {
                      S gv = tp.grad_ref(nd.outs[0]).ptr()[0];
                      const Tensor<S>& lv2 = tp.val(lid);
                      const auto& ls2 = lv2.shape();
                      Tensor<S> gx(ls2);
                      const S* lp2 = lv2.ptr();
                      S* gxp = gx.mut();
                      double invb = 1.0 / static_cast<double>(ls2.b);
                      for (int64_t b = 0; b < ls2.b; ++b) {
                          const S* row = lp2 + b * ls2.c;
                          double mx = row[0];
                          for (int64_t c = 1; c < ls2.c; ++c) mx = std::max(mx, static_cast<double>(row[c]));
                          double z = 0;
                          for (int64_t c = 0; c < ls2.c; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
                          for (int64_t c = 0; c < ls2.c; ++c) {
                              double p = std::exp(static_cast<double>(row[c]) - mx) / z;
                              double d = p - (labels[static_cast<size_t>(b)] == c ? 1.0 : 0.0);
                              gxp[b * ls2.c + c] = static_cast<S>(static_cast<double>(gv) * d * invb);
                          }
                      }
                      tp.add_grad(lid, gx);
                  });
}

// ---------------------------------------------------------------------------
// Fourier ops. The half-spectrum is carried as 2c real channels with
// interleaved (Re_k, Im_k) pairs; width shrinks to w/2+1.
// ---------------------------------------------------------------------------

template <class S>
Var<S> rfft2(Var<S> x) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    int64_t wr = fft::rfft_cols(xs.w);
    const Tensor<S>& xv = t.val(x);
    Tensor<S> out(Shape4(xs.b, 2 * xs.c, xs.h, wr));
    std::vector<std::complex<S>> spec(static_cast<size_t>(xs.h * wr));
    for (int64_t b = 0; b < xs.b; ++b)
        for (int64_t c = 0; c < xs.c; ++c) {
            fft::rfft2_plane(xv.ptr() + (b * xs.c + c) * xs.h * xs.w, xs.h, xs.w, spec.data());
            S* re = out.mut() + (b * 2 * xs.c + 2 * c) * xs.h * wr;
            S* im = out.mut() + (b * 2 * xs.c + 2 * c + 1) * xs.h * wr;
            for (int64_t i = 0; i < xs.h * wr; ++i) {
                re[i] = spec[static_cast<size_t>(i)].real();
                im[i] = spec[static_cast<size_t>(i)].imag();
            }
        }
    int xid = x.id;
    int64_t w_orig = xs.w;
    return t.emit("rfft2", {xid}, std::move(out), {},
                  [xid, w_orig](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const auto& xs2 = tp.shape_of(xid);
                      const auto& gs = g.shape();
                      Tensor<S> gx(xs2);
                      std::vector<std::complex<S>> spec(static_cast<size_t>(gs.h * gs.w));
                      for (int64_t b = 0; b < xs2.b; ++b)
                          for (int64_t c = 0; c < xs2.c; ++c) {
                              const S* re = g.ptr() + (b * gs.c + 2 * c) * gs.h * gs.w;
                              const S* im = g.ptr() + (b * gs.c + 2 * c + 1) * gs.h * gs.w;
                              for (int64_t i = 0; i < gs.h * gs.w; ++i)
                                  spec[static_cast<size_t>(i)] = std::complex<S>(re[i], im[i]);
                              fft::rfft2_adjoint_plane(spec.data(), xs2.h, w_orig,
                                                       gx.mut() + (b * xs2.c + c) * xs2.h * xs2.w);
                          }
                      tp.add_grad(xid, gx);
                  });
}

// Inverse of rfft2 back to (b, c, h, w); `w_out` resolves the height
// ambiguity of the packed half-spectrum.
template <class S>
Var<S> irfft2(Var<S> x, int64_t w_out) {
    Tape<S>& t = *x.tape;
    const auto& xs = x.shape();
    detail::expect<S>(xs.c % 2 == 0, "irfft2", "expects interleaved Re/Im channel pairs");
    detail::expect<S>(fft::rfft_cols(w_out) == xs.w, "irfft2",
                      "spectrum width " + std::to_string(xs.w) + " does not match output width " +
                          std::to_string(w_out));
    const Tensor<S>& xv = t.val(x);
    int64_t c_out = xs.c / 2;
    Tensor<S> out(Shape4(xs.b, c_out, xs.h, w_out));
    std::vector<std::complex<S>> spec(static_cast<size_t>(xs.h * xs.w));
    for (int64_t b = 0; b < xs.b; ++b)
        for (int64_t c = 0; c < c_out; ++c) {
            const S* re = xv.ptr() + (b * xs.c + 2 * c) * xs.h * xs.w;
            const S* im = xv.ptr() + (b * xs.c + 2 * c + 1) * xs.h * xs.w;
            for (int64_t i = 0; i < xs.h * xs.w; ++i) spec[static_cast<size_t>(i)] = std::complex<S>(re[i], im[i]);
            fft::irfft2_plane(spec.data(), xs.h, w_out, out.mut() + (b * c_out + c) * xs.h * w_out);
        }
    int xid = x.id;
    return t.emit("irfft2", {xid}, std::move(out), {},
                  [xid, w_out](Tape<S>& tp, const typename Tape<S>::Node& n) {
                      const Tensor<S>& g = tp.grad_ref(n.outs[0]);
                      const auto& xs2 = tp.shape_of(xid);
                      const auto& gs = g.shape();
                      Tensor<S> gx(xs2);
                      std::vector<std::complex<S>> spec(static_cast<size_t>(xs2.h * xs2.w));
                      for (int64_t b = 0; b < gs.b; ++b)
                          for (int64_t c = 0; c < gs.c; ++c) {
                              fft::irfft2_adjoint_plane(g.ptr() + (b * gs.c + c) * gs.h * gs.w, gs.h, w_out,
                                                        spec.data());
                              S* re = gx.mut() + (b * xs2.c + 2 * c) * xs2.h * xs2.w;
                              S* im = gx.mut() + (b * xs2.c + 2 * c + 1) * xs2.h * xs2.w;
                              for (int64_t i = 0; i < xs2.h * xs2.w; ++i) {
                                  re[i] = spec[static_cast<size_t>(i)].real();
                                  im[i] = spec[static_cast<size_t>(i)].imag();
                              }
                          }
                      tp.add_grad(xid, gx);
                  });
}

}  // namespace rvd::ops
