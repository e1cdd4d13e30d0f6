// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// 3-D neural-network kernels over [N,C,D,H,W] tensors: convolution (plus a
// brute-force oracle twin), transposed convolution, max pooling, trilinear
// resize, global average pooling, and a fully connected layer.
//
// The fast paths keep the innermost loop running along W, which is
// contiguous in memory. Backward passes accumulate in a fixed loop order, so
// results are bit-reproducible run to run; parallelism, if added, must split
// over disjoint output slabs.

#pragma once

#include <array>
#include <optional>
#include <type_traits>

#include "voxseg/tensor.hpp"

namespace voxseg {

using Triple = std::array<std::int64_t, 3>;

struct Conv3dSpec {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    Triple kernel = {3, 3, 3};
    Triple stride = {1, 1, 1};
    Triple padding = {1, 1, 1};
    // Used by conv3d_transposed only; extends the output extent per axis.
    Triple output_padding = {0, 0, 0};
    bool has_bias = true;
};

namespace detail {

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t s,
                                    std::int64_t p) {
    return (in + 2 * p - k) / s + 1;
}

inline std::int64_t tconv_out_extent(std::int64_t in, std::int64_t k, std::int64_t s,
                                     std::int64_t p, std::int64_t op) {
    return (in - 1) * s - 2 * p + k + op;
}

// Range of output indices o with 0 <= o*s - p + k < in.
struct AxisRange {
    std::int64_t lo, hi;
};

inline AxisRange valid_out_range(std::int64_t out, std::int64_t in, std::int64_t k,
                                 std::int64_t s, std::int64_t p) {
    const std::int64_t a = p - k;  // o*s >= a
    std::int64_t lo = a <= 0 ? 0 : (a + s - 1) / s;
    const std::int64_t b = in - 1 + p - k;  // o*s <= b
    std::int64_t hi = b < 0 ? 0 : std::min(out, b / s + 1);
    if (hi < lo) hi = lo;
    return {lo, hi};
}

template <typename S>
void check_conv_args(const Tensor<S>& x, const Tensor<S>& w,
                     const std::optional<Tensor<S>>& b, const Conv3dSpec& spec,
                     bool transposed, const char* name) {
    check_rank5(x, name);
    require(w.rank() == 5, std::string(name) + ": weight must be rank-5, got " +
                               shape_str(w.shape()));
    for (int a = 0; a < 3; ++a) {
        require(spec.kernel[std::size_t(a)] >= 1 && spec.kernel[std::size_t(a)] % 2 == 1,
                std::string(name) + ": kernel extents must be odd and positive");
        require(spec.stride[std::size_t(a)] >= 1, std::string(name) + ": stride must be >= 1");
        require(spec.padding[std::size_t(a)] >= 0, std::string(name) + ": negative padding");
        require(w.shape()[std::size_t(2 + a)] == spec.kernel[std::size_t(a)],
                std::string(name) + ": weight spatial extents disagree with spec kernel");
    }
    const std::int64_t wc0 = w.shape()[0], wc1 = w.shape()[1];
    const std::int64_t expect0 = transposed ? spec.in_channels : spec.out_channels;
    const std::int64_t expect1 = transposed ? spec.out_channels : spec.in_channels;
    require(wc0 == expect0 && wc1 == expect1,
            std::string(name) + ": weight channels " + shape_str({wc0, wc1}) +
                " disagree with spec channels");
    require(x.shape()[1] == spec.in_channels,
            std::string(name) + ": input has " + std::to_string(x.shape()[1]) +
                " channels, spec expects " + std::to_string(spec.in_channels));
    require(bool(b) == spec.has_bias,
            std::string(name) + ": bias presence disagrees with spec.has_bias");
    if (b) {
        require(b->rank() == 1 && b->shape()[0] == spec.out_channels,
                std::string(name) + ": bias must be [out_channels], got " +
                    shape_str(b->shape()));
    }
}

// dx gather/pass-scatter shared by conv3d backward and the transposed
// forward: accumulate g (conv-output-shaped) against w into an
// input-shaped buffer. Geometry is the conv geometry (out extents derived
// from in extents). w is indexed [c_g, c_x, kd,kh,kw] when wg_major is
// true, else [c_x, c_g, kd,kh,kw].
template <typename S, typename T>
void conv_accumulate_input(const S* g, const Shape& gs, const S* w, bool wg_major,
                           T* acc, const Shape& xs, const Conv3dSpec& spec) {
    const std::int64_t N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::int64_t Co = gs[1], OD = gs[2], OH = gs[3], OW = gs[4];
    const auto [kd, kh, kw] = spec.kernel;
    const auto [sd, sh, sw] = spec.stride;
    const auto [pd, ph, pw] = spec.padding;
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t ci = 0; ci < Ci; ++ci)
            for (std::int64_t co = 0; co < Co; ++co)
                for (std::int64_t zd = 0; zd < kd; ++zd) {
                    const auto rd = valid_out_range(OD, D, zd, sd, pd);
                    for (std::int64_t zh = 0; zh < kh; ++zh) {
                        const auto rh = valid_out_range(OH, H, zh, sh, ph);
                        for (std::int64_t zw = 0; zw < kw; ++zw) {
                            const auto rw = valid_out_range(OW, W, zw, sw, pw);
                            const std::int64_t widx =
                                wg_major ? ((((co * Ci) + ci) * kd + zd) * kh + zh) * kw + zw
                                         : ((((ci * Co) + co) * kd + zd) * kh + zh) * kw + zw;
                            const S wv = w[widx];
                            if (wv == S(0)) continue;
                            for (std::int64_t od = rd.lo; od < rd.hi; ++od) {
                                const std::int64_t id = od * sd - pd + zd;
                                for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
                                    const std::int64_t ih = oh * sh - ph + zh;
                                    const S* grow =
                                        g + ((((n * Co) + co) * OD + od) * OH + oh) * OW;
                                    T* arow =
                                        acc + ((((n * Ci) + ci) * D + id) * H + ih) * W;
                                    for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow)
                                        arow[ow * sw - pw + zw] += T(wv) * T(grow[ow]);
                                }
                            }
                        }
                    }
                }
}

// Registers the shared conv3d backward (used by both the fast kernel and
// the naive oracle, which differ only in how the forward data was produced).
template <typename S>
Tensor<S> make_conv_result(Shape out_shape, std::vector<S> data, const Tensor<S>& x,
                           const Tensor<S>& w, const std::optional<Tensor<S>>& b,
                           const Conv3dSpec& spec) {
    std::vector<Tensor<S>> inputs = {x, w};
    if (b) inputs.push_back(*b);
    return make_result<S>(
        std::move(out_shape), std::move(data), std::move(inputs),
        [x, w, b, spec](TensorNode<S>& self) {
            const Shape& xs = x.shape();
            const Shape& os = self.shape;
            const std::int64_t N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
            const std::int64_t Co = os[1], OD = os[2], OH = os[3], OW = os[4];
            const auto [kd, kh, kw] = spec.kernel;
            const auto [sd, sh, sw] = spec.stride;
            const auto [pd, ph, pw] = spec.padding;
            const S* g = self.grad.data();

            if (b && b->node().participates()) {
                auto& gb = b->node().grad_buf();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t co = 0; co < Co; ++co) {
                        const S* p = g + ((n * Co) + co) * OD * OH * OW;
                        S acc = 0;
                        for (std::int64_t i = 0; i < OD * OH * OW; ++i) acc += p[i];
                        gb[std::size_t(co)] += acc;
                    }
            }

            if (w.node().participates()) {
                auto& gw = w.node().grad_buf();
                const S* xv = x.node().data.data();
                for (std::int64_t co = 0; co < Co; ++co)
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t zd = 0; zd < kd; ++zd) {
                            const auto rd = valid_out_range(OD, D, zd, sd, pd);
                            for (std::int64_t zh = 0; zh < kh; ++zh) {
                                const auto rh = valid_out_range(OH, H, zh, sh, ph);
                                for (std::int64_t zw = 0; zw < kw; ++zw) {
                                    const auto rw = valid_out_range(OW, W, zw, sw, pw);
                                    S acc = 0;
                                    for (std::int64_t n = 0; n < N; ++n)
                                        for (std::int64_t od = rd.lo; od < rd.hi; ++od) {
                                            const std::int64_t id = od * sd - pd + zd;
                                            for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
                                                const std::int64_t ih = oh * sh - ph + zh;
                                                const S* grow =
                                                    g +
                                                    ((((n * Co) + co) * OD + od) * OH + oh) *
                                                        OW;
                                                const S* xrow =
                                                    xv +
                                                    ((((n * Ci) + ci) * D + id) * H + ih) * W;
                                                for (std::int64_t ow = rw.lo; ow < rw.hi;
                                                     ++ow)
                                                    acc += grow[ow] *
                                                           xrow[ow * sw - pw + zw];
                                            }
                                        }
                                    gw[std::size_t(
                                        ((((co * Ci) + ci) * kd + zd) * kh + zh) * kw +
                                        zw)] += acc;
                                }
                            }
                        }
            }

            if (x.node().participates()) {
                auto& gx = x.node().grad_buf();
                conv_accumulate_input<S, S>(g, self.shape, w.node().data.data(),
                                            /*wg_major=*/true, gx.data(), x.shape(), spec);
            }
        });
}

}  // namespace detail

// Cross-correlation (no kernel flip) with zero-padded borders.
// x [N,Cin,D,H,W], w [Cout,Cin,kd,kh,kw], optional b [Cout].
template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& w,
                 const std::optional<Tensor<std::type_identity_t<S>>>& b,
                 const Conv3dSpec& spec) {
    detail::check_conv_args(x, w, b, spec, /*transposed=*/false, "conv3d");
    const Shape& xs = x.shape();
    const std::int64_t N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::int64_t Co = spec.out_channels;
    const auto [kd, kh, kw] = spec.kernel;
    const auto [sd, sh, sw] = spec.stride;
    const auto [pd, ph, pw] = spec.padding;
    const std::int64_t OD = detail::conv_out_extent(D, kd, sd, pd);
    const std::int64_t OH = detail::conv_out_extent(H, kh, sh, ph);
    const std::int64_t OW = detail::conv_out_extent(W, kw, sw, pw);
    require(OD >= 1 && OH >= 1 && OW >= 1,
            "conv3d: output extent < 1 for input " + shape_str(xs));

    std::vector<S> y(static_cast<std::size_t>(N * Co * OD * OH * OW), S(0));
    const S* xv = x.node().data.data();
    const S* wv = w.node().data.data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Co; ++co) {
            S* plane = y.data() + ((n * Co) + co) * OD * OH * OW;
            if (b) {
                const S bias = b->node().data[std::size_t(co)];
                for (std::int64_t i = 0; i < OD * OH * OW; ++i) plane[i] = bias;
            }
            for (std::int64_t ci = 0; ci < Ci; ++ci)
                for (std::int64_t zd = 0; zd < kd; ++zd) {
                    const auto rd = detail::valid_out_range(OD, D, zd, sd, pd);
                    for (std::int64_t zh = 0; zh < kh; ++zh) {
                        const auto rh = detail::valid_out_range(OH, H, zh, sh, ph);
                        for (std::int64_t zw = 0; zw < kw; ++zw) {
                            const auto rw = detail::valid_out_range(OW, W, zw, sw, pw);
                            const S wgt =
                                wv[((((co * Ci) + ci) * kd + zd) * kh + zh) * kw + zw];
                            if (wgt == S(0)) continue;
                            for (std::int64_t od = rd.lo; od < rd.hi; ++od) {
                                const std::int64_t id = od * sd - pd + zd;
                                for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
                                    const std::int64_t ih = oh * sh - ph + zh;
                                    S* orow = plane + (od * OH + oh) * OW;
                                    const S* xrow =
                                        xv + ((((n * Ci) + ci) * D + id) * H + ih) * W;
                                    if (sw == 1) {
                                        const S* xr = xrow - pw + zw;
                                        for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow)
                                            orow[ow] += wgt * xr[ow];
                                    } else {
                                        for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow)
                                            orow[ow] += wgt * xrow[ow * sw - pw + zw];
                                    }
                                }
                            }
                        }
                    }
                }
        }
    return detail::make_conv_result({N, Co, OD, OH, OW}, std::move(y), x, w, b, spec);
}

// Brute-force oracle twin: seven nested loops, per-element bounds checks,
// 64-bit accumulation regardless of the tensor scalar type. Same contract
// and backward as conv3d; only the forward loop nest is independent.
template <typename S>
Tensor<S> conv3d_naive(const Tensor<S>& x, const Tensor<S>& w,
                       const std::optional<Tensor<std::type_identity_t<S>>>& b,
                       const Conv3dSpec& spec) {
    detail::check_conv_args(x, w, b, spec, /*transposed=*/false, "conv3d_naive");
    const Shape& xs = x.shape();
    const std::int64_t N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::int64_t Co = spec.out_channels;
    const auto [kd, kh, kw] = spec.kernel;
    const auto [sd, sh, sw] = spec.stride;
    const auto [pd, ph, pw] = spec.padding;
    const std::int64_t OD = detail::conv_out_extent(D, kd, sd, pd);
    const std::int64_t OH = detail::conv_out_extent(H, kh, sh, ph);
    const std::int64_t OW = detail::conv_out_extent(W, kw, sw, pw);
    require(OD >= 1 && OH >= 1 && OW >= 1,
            "conv3d_naive: output extent < 1 for input " + shape_str(xs));

    std::vector<S> y(static_cast<std::size_t>(N * Co * OD * OH * OW));
    const S* xv = x.node().data.data();
    const S* wv = w.node().data.data();
    std::size_t out = 0;
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Co; ++co)
            for (std::int64_t od = 0; od < OD; ++od)
                for (std::int64_t oh = 0; oh < OH; ++oh)
                    for (std::int64_t ow = 0; ow < OW; ++ow) {
                        double acc = b ? double(b->node().data[std::size_t(co)]) : 0.0;
                        for (std::int64_t ci = 0; ci < Ci; ++ci)
                            for (std::int64_t zd = 0; zd < kd; ++zd)
                                for (std::int64_t zh = 0; zh < kh; ++zh)
                                    for (std::int64_t zw = 0; zw < kw; ++zw) {
                                        const std::int64_t id = od * sd - pd + zd;
                                        const std::int64_t ih = oh * sh - ph + zh;
                                        const std::int64_t iw = ow * sw - pw + zw;
                                        if (id < 0 || id >= D || ih < 0 || ih >= H ||
                                            iw < 0 || iw >= W)
                                            continue;
                                        acc += double(xv[((((n * Ci) + ci) * D + id) * H +
                                                          ih) *
                                                             W +
                                                         iw]) *
                                               double(
                                                   wv[((((co * Ci) + ci) * kd + zd) * kh +
                                                       zh) *
                                                          kw +
                                                      zw]);
                                    }
                        y[out++] = S(acc);
                    }
    return detail::make_conv_result({N, Co, OD, OH, OW}, std::move(y), x, w, b, spec);
}

// Adjoint of conv3d. x [N,Cin,D,H,W], w [Cin,Cout,kd,kh,kw], optional
// b [Cout]. With kernel 3, stride 2, pad 1, output_padding 1 the spatial
// extents exactly double.
template <typename S>
Tensor<S> conv3d_transposed(const Tensor<S>& x, const Tensor<S>& w,
                            const std::optional<Tensor<std::type_identity_t<S>>>& b,
                            const Conv3dSpec& spec) {
    detail::check_conv_args(x, w, b, spec, /*transposed=*/true, "conv3d_transposed");
    const Shape& xs = x.shape();
    const std::int64_t N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::int64_t Co = spec.out_channels;
    const auto [kd, kh, kw] = spec.kernel;
    const auto [sd, sh, sw] = spec.stride;
    const auto [pd, ph, pw] = spec.padding;
    const auto [qd, qh, qw] = spec.output_padding;
    const std::int64_t OD = detail::tconv_out_extent(D, kd, sd, pd, qd);
    const std::int64_t OH = detail::tconv_out_extent(H, kh, sh, ph, qh);
    const std::int64_t OW = detail::tconv_out_extent(W, kw, sw, pw, qw);
    require(OD >= 1 && OH >= 1 && OW >= 1,
            "conv3d_transposed: computed output extent < 1 for input " + shape_str(xs));

    // Forward is the conv-input accumulation with x in the conv-output role:
    // out[t] += x[o] * w  where t = o*stride - pad + k.
    std::vector<S> y(static_cast<std::size_t>(N * Co * OD * OH * OW), S(0));
    Conv3dSpec geom = spec;  // conv geometry mapping out (big) -> in (small)
    geom.in_channels = Co;
    geom.out_channels = Ci;
    detail::conv_accumulate_input<S, S>(x.node().data.data(), x.shape(),
                                        w.node().data.data(),
                                        /*wg_major=*/true, y.data(),
                                        {N, Co, OD, OH, OW}, geom);
    if (b) {
        const auto& bv = b->node().data;
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t co = 0; co < Co; ++co) {
                S* plane = y.data() + ((n * Co) + co) * OD * OH * OW;
                for (std::int64_t i = 0; i < OD * OH * OW; ++i)
                    plane[i] += bv[std::size_t(co)];
            }
    }

    std::vector<Tensor<S>> inputs = {x, w};
    if (b) inputs.push_back(*b);
    return detail::make_result<S>(
        {N, Co, OD, OH, OW}, std::move(y), std::move(inputs),
        [x, w, b, spec](TensorNode<S>& self) {
            const Shape& xs = x.shape();
            const Shape& os = self.shape;
            const std::int64_t N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
            const std::int64_t Co = os[1], OD = os[2], OH = os[3], OW = os[4];
            const auto [kd, kh, kw] = spec.kernel;
            const auto [sd, sh, sw] = spec.stride;
            const auto [pd, ph, pw] = spec.padding;
            const S* g = self.grad.data();

            if (b && b->node().participates()) {
                auto& gb = b->node().grad_buf();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t co = 0; co < Co; ++co) {
                        const S* p = g + ((n * Co) + co) * OD * OH * OW;
                        S acc = 0;
                        for (std::int64_t i = 0; i < OD * OH * OW; ++i) acc += p[i];
                        gb[std::size_t(co)] += acc;
                    }
            }

            // dx[n,ci,o] = sum_{co,k} g[n,co,o*s-p+k] * w[ci,co,k]: a direct
            // gather with conv geometry (x plays the conv-output role).
            if (x.node().participates()) {
                auto& gx = x.node().grad_buf();
                const S* wv = w.node().data.data();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t od = 0; od < D; ++od)
                            for (std::int64_t oh = 0; oh < H; ++oh)
                                for (std::int64_t ow = 0; ow < W; ++ow) {
                                    S acc = 0;
                                    for (std::int64_t co = 0; co < Co; ++co)
                                        for (std::int64_t zd = 0; zd < kd; ++zd) {
                                            const std::int64_t td = od * sd - pd + zd;
                                            if (td < 0 || td >= OD) continue;
                                            for (std::int64_t zh = 0; zh < kh; ++zh) {
                                                const std::int64_t th = oh * sh - ph + zh;
                                                if (th < 0 || th >= OH) continue;
                                                for (std::int64_t zw = 0; zw < kw; ++zw) {
                                                    const std::int64_t tw =
                                                        ow * sw - pw + zw;
                                                    if (tw < 0 || tw >= OW) continue;
                                                    acc +=
                                                        g[((((n * Co) + co) * OD + td) * OH +
                                                           th) *
                                                              OW +
                                                          tw] *
                                                        wv[((((ci * Co) + co) * kd + zd) *
                                                                kh +
                                                            zh) *
                                                               kw +
                                                           zw];
                                                }
                                            }
                                        }
                                    gx[std::size_t(
                                        ((((n * Ci) + ci) * D + od) * H + oh) * W + ow)] +=
                                        acc;
                                }
            }

            // dw[ci,co,k] = sum_{n,o} x[n,ci,o] * g[n,co,o*s-p+k]
            if (w.node().participates()) {
                auto& gw = w.node().grad_buf();
                const S* xv = x.node().data.data();
                for (std::int64_t ci = 0; ci < Ci; ++ci)
                    for (std::int64_t co = 0; co < Co; ++co)
                        for (std::int64_t zd = 0; zd < kd; ++zd)
                            for (std::int64_t zh = 0; zh < kh; ++zh)
                                for (std::int64_t zw = 0; zw < kw; ++zw) {
                                    S acc = 0;
                                    for (std::int64_t n = 0; n < N; ++n)
                                        for (std::int64_t od = 0; od < D; ++od) {
                                            const std::int64_t td = od * sd - pd + zd;
                                            if (td < 0 || td >= OD) continue;
                                            for (std::int64_t oh = 0; oh < H; ++oh) {
                                                const std::int64_t th = oh * sh - ph + zh;
                                                if (th < 0 || th >= OH) continue;
                                                const S* xrow =
                                                    xv +
                                                    ((((n * Ci) + ci) * D + od) * H + oh) * W;
                                                const S* grow =
                                                    g +
                                                    ((((n * Co) + co) * OD + td) * OH + th) *
                                                        OW;
                                                for (std::int64_t ow = 0; ow < W; ++ow) {
                                                    const std::int64_t tw =
                                                        ow * sw - pw + zw;
                                                    if (tw < 0 || tw >= OW) continue;
                                                    acc += xrow[ow] * grow[tw];
                                                }
                                            }
                                        }
                                    gw[std::size_t(
                                        ((((ci * Co) + co) * kd + zd) * kh + zh) * kw +
                                        zw)] += acc;
                                }
            }
        });
}

// 2x2x2 max pooling with stride 2. Gradient routes to the argmax element;
// ties go to the first element in scan order.
template <typename S>
Tensor<S> maxpool3d(const Tensor<S>& x) {
    detail::check_rank5(x, "maxpool3d");
    const Shape& xs = x.shape();
    const std::int64_t N = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
    require(D % 2 == 0 && H % 2 == 0 && W % 2 == 0,
            "maxpool3d: spatial extents must be even, got " + shape_str(xs));
    const std::int64_t OD = D / 2, OH = H / 2, OW = W / 2;
    std::vector<S> y(static_cast<std::size_t>(N * C * OD * OH * OW));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(y.size());
    const S* xv = x.node().data.data();
    std::size_t oi = 0;
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const S* vol = xv + nc * D * H * W;
        for (std::int64_t od = 0; od < OD; ++od)
            for (std::int64_t oh = 0; oh < OH; ++oh)
                for (std::int64_t ow = 0; ow < OW; ++ow) {
                    S best = vol[((od * 2) * H + oh * 2) * W + ow * 2];
                    std::int64_t best_at = ((od * 2) * H + oh * 2) * W + ow * 2;
                    for (std::int64_t dz = 0; dz < 2; ++dz)
                        for (std::int64_t dy = 0; dy < 2; ++dy)
                            for (std::int64_t dx = 0; dx < 2; ++dx) {
                                const std::int64_t at =
                                    ((od * 2 + dz) * H + oh * 2 + dy) * W + ow * 2 + dx;
                                if (vol[at] > best) {
                                    best = vol[at];
                                    best_at = at;
                                }
                            }
                    y[oi] = best;
                    (*argmax)[oi] = nc * D * H * W + best_at;
                    ++oi;
                }
    }
    return detail::make_result<S>(
        {N, C, OD, OH, OW}, std::move(y), {x}, [x, argmax](TensorNode<S>& self) {
            if (!x.node().participates()) return;
            auto& gx = x.node().grad_buf();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                gx[std::size_t((*argmax)[i])] += self.grad[i];
        });
}

// Align-corners-true trilinear interpolation to a target spatial shape:
// source coordinate = out_idx * (in-1) / (out-1), the channel center when
// the output extent is 1.
template <typename S>
Tensor<S> trilinear_resize(const Tensor<S>& x, const Triple& target) {
    detail::check_rank5(x, "trilinear_resize");
    for (auto t : target) require(t >= 1, "trilinear_resize: target extents must be >= 1");
    const Shape& xs = x.shape();
    const std::int64_t N = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::int64_t OD = target[0], OH = target[1], OW = target[2];

    // Per-axis sample positions: lower index, upper index, interpolation t.
    struct Samp {
        std::int64_t i0, i1;
        S t;
    };
    auto make_axis = [](std::int64_t out, std::int64_t in) {
        std::vector<Samp> v(static_cast<std::size_t>(out));
        for (std::int64_t j = 0; j < out; ++j) {
            double f = out == 1 ? double(in - 1) / 2.0
                                : double(j) * double(in - 1) / double(out - 1);
            std::int64_t i0 = std::int64_t(std::floor(f));
            if (i0 > in - 1) i0 = in - 1;
            std::int64_t i1 = std::min(i0 + 1, in - 1);
            v[std::size_t(j)] = {i0, i1, S(f - double(i0))};
        }
        return v;
    };
    auto ad = std::make_shared<std::vector<Samp>>(make_axis(OD, D));
    auto ah = std::make_shared<std::vector<Samp>>(make_axis(OH, H));
    auto aw = std::make_shared<std::vector<Samp>>(make_axis(OW, W));

    std::vector<S> y(static_cast<std::size_t>(N * C * OD * OH * OW));
    const S* xv = x.node().data.data();
    std::size_t oi = 0;
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const S* vol = xv + nc * D * H * W;
        for (const auto& sd : *ad)
            for (const auto& sh : *ah)
                for (const auto& sw : *aw) {
                    const S c000 = vol[(sd.i0 * H + sh.i0) * W + sw.i0];
                    const S c001 = vol[(sd.i0 * H + sh.i0) * W + sw.i1];
                    const S c010 = vol[(sd.i0 * H + sh.i1) * W + sw.i0];
                    const S c011 = vol[(sd.i0 * H + sh.i1) * W + sw.i1];
                    const S c100 = vol[(sd.i1 * H + sh.i0) * W + sw.i0];
                    const S c101 = vol[(sd.i1 * H + sh.i0) * W + sw.i1];
                    const S c110 = vol[(sd.i1 * H + sh.i1) * W + sw.i0];
                    const S c111 = vol[(sd.i1 * H + sh.i1) * W + sw.i1];
                    const S w00 = c000 + (c001 - c000) * sw.t;
                    const S w01 = c010 + (c011 - c010) * sw.t;
                    const S w10 = c100 + (c101 - c100) * sw.t;
                    const S w11 = c110 + (c111 - c110) * sw.t;
                    const S h0 = w00 + (w01 - w00) * sh.t;
                    const S h1 = w10 + (w11 - w10) * sh.t;
                    y[oi++] = h0 + (h1 - h0) * sd.t;
                }
    }
    return detail::make_result<S>(
        {N, C, OD, OH, OW}, std::move(y), {x},
        [x, ad, ah, aw, D, H, W](TensorNode<S>& self) {
            if (!x.node().participates()) return;
            auto& gx = x.node().grad_buf();
            const std::int64_t NC = self.shape[0] * self.shape[1];
            std::size_t oi = 0;
            for (std::int64_t nc = 0; nc < NC; ++nc) {
                S* gv = gx.data() + nc * D * H * W;
                for (const auto& sd : *ad)
                    for (const auto& sh : *ah)
                        for (const auto& sw : *aw) {
                            const S g = self.grad[oi++];
                            const S td = sd.t, th = sh.t, tw = sw.t;
                            gv[(sd.i0 * H + sh.i0) * W + sw.i0] +=
                                g * (1 - td) * (1 - th) * (1 - tw);
                            gv[(sd.i0 * H + sh.i0) * W + sw.i1] +=
                                g * (1 - td) * (1 - th) * tw;
                            gv[(sd.i0 * H + sh.i1) * W + sw.i0] +=
                                g * (1 - td) * th * (1 - tw);
                            gv[(sd.i0 * H + sh.i1) * W + sw.i1] += g * (1 - td) * th * tw;
                            gv[(sd.i1 * H + sh.i0) * W + sw.i0] +=
                                g * td * (1 - th) * (1 - tw);
                            gv[(sd.i1 * H + sh.i0) * W + sw.i1] += g * td * (1 - th) * tw;
                            gv[(sd.i1 * H + sh.i1) * W + sw.i0] += g * td * th * (1 - tw);
                            gv[(sd.i1 * H + sh.i1) * W + sw.i1] += g * td * th * tw;
                        }
            }
        });
}

// Mean over all spatial positions per (sample, channel): [N,C,D,H,W] -> [N,C].
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
    detail::check_rank5(x, "global_avg_pool");
    return channel_mean(x);
}

// Fully connected layer: x [N,F], w [G,F], b [G] -> x*w^T + b.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1,
            "linear: need x [N,F], w [G,F], b [G], got " + shape_str(x.shape()) + ", " +
                shape_str(w.shape()) + ", " + shape_str(b.shape()));
    const std::int64_t N = x.shape()[0], F = x.shape()[1];
    const std::int64_t G = w.shape()[0];
    require(w.shape()[1] == F, "linear: weight feature extent " +
                                   std::to_string(w.shape()[1]) + " != input features " +
                                   std::to_string(F));
    require(b.shape()[0] == G, "linear: bias extent " + std::to_string(b.shape()[0]) +
                                   " != output features " + std::to_string(G));
    std::vector<S> y(static_cast<std::size_t>(N * G));
    {
        ConstMatMap<S> X(x.node().data.data(), N, F);
        ConstMatMap<S> Wt(w.node().data.data(), G, F);
        MatMap<S> Y(y.data(), N, G);
        Y.noalias() = X * Wt.transpose();
        Y.rowwise() +=
            Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.node().data.data(), G);
    }
    return detail::make_result<S>(
        {N, G}, std::move(y), {x, w, b}, [x, w, b, N, F, G](TensorNode<S>& self) {
            ConstMatMap<S> Gr(self.grad.data(), N, G);
            if (x.node().participates()) {
                ConstMatMap<S> Wt(w.node().data.data(), G, F);
                MatMap<S> GX(x.node().grad_buf().data(), N, F);
                GX.noalias() += Gr * Wt;
            }
            if (w.node().participates()) {
                ConstMatMap<S> X(x.node().data.data(), N, F);
                MatMap<S> GW(w.node().grad_buf().data(), G, F);
                GW.noalias() += Gr.transpose() * X;
            }
            if (b.node().participates()) {
                auto& gb = b.node().grad_buf();
                for (std::int64_t j = 0; j < G; ++j) {
                    S acc = 0;
                    for (std::int64_t n = 0; n < N; ++n)
                        acc += self.grad[std::size_t(n * G + j)];
                    gb[std::size_t(j)] += acc;
                }
            }
        });
}

}  // namespace voxseg
