#pragma once
#include <algorithm>
#include <cmath>

#include "crs/tensor.hpp"

namespace crs {

// Value-level numeric kernels. Each forward has matching backward routines
// that accumulate (+=) into caller-owned gradient tensors; the autodiff tape
// in tape.hpp wires them together. All ops are pure: inputs are never
// written in place.

// ---------------------------------------------------------------------------
// conv2d: cross-correlation with zero padding (k-1)/2 and integer stride.
// Kernel tensor w is (C_out * C_in, k, k); bias b is (C_out, 1, 1) or absent.
// Output height is floor((H + 2p - k) / stride) + 1, which preserves H for
// stride 1 and halves even H for stride 2 with k = 3.
// ---------------------------------------------------------------------------

struct ConvDims {
    int c_in = 0, c_out = 0, k = 0, pad = 0, stride = 1, out_h = 0, out_w = 0;
};

inline ConvDims conv2d_dims(const Tensor& x, const Tensor& w, int stride) {
    if (w.h != w.w) throw shape_error("conv2d: kernel must be square, got " + w.shape_str());
    if (w.h % 2 == 0) throw shape_error("conv2d: kernel size must be odd, got " + w.shape_str());
    if (w.c % x.c != 0)
        throw shape_error("conv2d: kernel channels " + std::to_string(w.c) +
                          " not a multiple of input channels " + std::to_string(x.c));
    if (stride < 1) throw shape_error("conv2d: stride must be >= 1");
    ConvDims d;
    d.c_in = x.c;
    d.c_out = w.c / x.c;
    d.k = w.h;
    d.pad = (d.k - 1) / 2;
    d.stride = stride;
    d.out_h = (x.h + 2 * d.pad - d.k) / stride + 1;
    d.out_w = (x.w + 2 * d.pad - d.k) / stride + 1;
    if (d.out_h < 1 || d.out_w < 1) throw shape_error("conv2d: output collapsed for input " + x.shape_str());
    return d;
}

inline Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor* b, int stride = 1) {
    ConvDims d = conv2d_dims(x, w, stride);
    if (b) {
        if (b->c != d.c_out || b->h != 1 || b->w != 1)
            throw shape_error("conv2d: bias shape " + b->shape_str() + " does not match C_out " +
                              std::to_string(d.c_out));
    }
    Tensor out(d.c_out, d.out_h, d.out_w);
    for (int co = 0; co < d.c_out; ++co) {
        double* op = out.channel(co);
        if (b) {
            const double bv = b->data[co];
            std::fill(op, op + static_cast<std::size_t>(d.out_h) * d.out_w, bv);
        }
        for (int ci = 0; ci < d.c_in; ++ci) {
            const double* ip = x.channel(ci);
            const double* wp = w.channel(co * d.c_in + ci);
            for (int ky = 0; ky < d.k; ++ky) {
                for (int kx = 0; kx < d.k; ++kx) {
                    const double wv = wp[ky * d.k + kx];
                    if (wv == 0.0) continue;
                    for (int oy = 0; oy < d.out_h; ++oy) {
                        const int iy = oy * d.stride + ky - d.pad;
                        if (iy < 0 || iy >= x.h) continue;
                        // valid ox range: 0 <= ox*stride + kx - pad < W
                        int ox_lo = 0, ox_hi = d.out_w - 1;
                        while (ox_lo <= ox_hi && ox_lo * d.stride + kx - d.pad < 0) ++ox_lo;
                        while (ox_hi >= ox_lo && ox_hi * d.stride + kx - d.pad >= x.w) --ox_hi;
                        double* orow = op + static_cast<std::size_t>(oy) * d.out_w;
                        const double* irow = ip + static_cast<std::size_t>(iy) * x.w + (kx - d.pad);
                        if (d.stride == 1) {
                            for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += wv * irow[ox];
                        } else {
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                orow[ox] += wv * irow[static_cast<std::size_t>(ox) * d.stride];
                        }
                    }
                }
            }
        }
    }
    return out;
}

inline void conv2d_bwd(const Tensor& x, const Tensor& w, int stride, const Tensor& gout,
                       Tensor* gx, Tensor* gw, Tensor* gb) {
    ConvDims d = conv2d_dims(x, w, stride);
    if (gb) {
        for (int co = 0; co < d.c_out; ++co) {
            const double* gp = gout.channel(co);
            double acc = 0.0;
            const std::size_t n = static_cast<std::size_t>(d.out_h) * d.out_w;
            for (std::size_t i = 0; i < n; ++i) acc += gp[i];
            gb->data[co] += acc;
        }
    }
    for (int co = 0; co < d.c_out; ++co) {
        const double* gp = gout.channel(co);
        for (int ci = 0; ci < d.c_in; ++ci) {
            const double* ip = x.channel(ci);
            double* gxp = gx ? gx->channel(ci) : nullptr;
            const double* wp = w.channel(co * d.c_in + ci);
            double* gwp = gw ? gw->channel(co * d.c_in + ci) : nullptr;
            for (int ky = 0; ky < d.k; ++ky) {
                for (int kx = 0; kx < d.k; ++kx) {
                    const double wv = wp[ky * d.k + kx];
                    double wacc = 0.0;
                    for (int oy = 0; oy < d.out_h; ++oy) {
                        const int iy = oy * d.stride + ky - d.pad;
                        if (iy < 0 || iy >= x.h) continue;
                        int ox_lo = 0, ox_hi = d.out_w - 1;
                        while (ox_lo <= ox_hi && ox_lo * d.stride + kx - d.pad < 0) ++ox_lo;
                        while (ox_hi >= ox_lo && ox_hi * d.stride + kx - d.pad >= x.w) --ox_hi;
                        const double* grow = gp + static_cast<std::size_t>(oy) * d.out_w;
                        const std::size_t ibase = static_cast<std::size_t>(iy) * x.w + (kx - d.pad);
                        if (gwp) {
                            const double* irow = ip + ibase;
                            if (d.stride == 1) {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) wacc += grow[ox] * irow[ox];
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    wacc += grow[ox] * irow[static_cast<std::size_t>(ox) * d.stride];
                            }
                        }
                        if (gxp && wv != 0.0) {
                            double* xrow = gxp + ibase;
                            if (d.stride == 1) {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) xrow[ox] += wv * grow[ox];
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    xrow[static_cast<std::size_t>(ox) * d.stride] += wv * grow[ox];
                            }
                        }
                    }
                    if (gwp) gwp[ky * d.k + kx] += wacc;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// bilinear_upsample2x: half-pixel-center convention. Output index i samples
// input coordinate (i + 0.5) / 2 - 0.5, clamped to the border.
// ---------------------------------------------------------------------------

struct LinTap {
    int i0 = 0, i1 = 0;
    double w0 = 1.0, w1 = 0.0;
};

inline LinTap upsample_tap(int out_i, int in_n) {
    const double s = (out_i + 0.5) / 2.0 - 0.5;
    const double f = std::floor(s);
    LinTap t;
    t.w1 = s - f;
    t.w0 = 1.0 - t.w1;
    t.i0 = std::clamp(static_cast<int>(f), 0, in_n - 1);
    t.i1 = std::clamp(static_cast<int>(f) + 1, 0, in_n - 1);
    return t;
}

inline Tensor bilinear_upsample2x_fwd(const Tensor& x) {
    Tensor out(x.c, 2 * x.h, 2 * x.w);
    std::vector<LinTap> xt(static_cast<std::size_t>(out.w));
    for (int ox = 0; ox < out.w; ++ox) xt[ox] = upsample_tap(ox, x.w);
    for (int ci = 0; ci < x.c; ++ci) {
        const double* ip = x.channel(ci);
        double* op = out.channel(ci);
        for (int oy = 0; oy < out.h; ++oy) {
            const LinTap ty = upsample_tap(oy, x.h);
            const double* r0 = ip + static_cast<std::size_t>(ty.i0) * x.w;
            const double* r1 = ip + static_cast<std::size_t>(ty.i1) * x.w;
            double* orow = op + static_cast<std::size_t>(oy) * out.w;
            for (int ox = 0; ox < out.w; ++ox) {
                const LinTap& tx = xt[ox];
                orow[ox] = ty.w0 * (tx.w0 * r0[tx.i0] + tx.w1 * r0[tx.i1]) +
                           ty.w1 * (tx.w0 * r1[tx.i0] + tx.w1 * r1[tx.i1]);
            }
        }
    }
    return out;
}

inline void bilinear_upsample2x_bwd(const Tensor& x, const Tensor& gout, Tensor& gx) {
    std::vector<LinTap> xt(static_cast<std::size_t>(gout.w));
    for (int ox = 0; ox < gout.w; ++ox) xt[ox] = upsample_tap(ox, x.w);
    for (int ci = 0; ci < x.c; ++ci) {
        const double* gp = gout.channel(ci);
        double* gxp = gx.channel(ci);
        for (int oy = 0; oy < gout.h; ++oy) {
            const LinTap ty = upsample_tap(oy, x.h);
            const double* grow = gp + static_cast<std::size_t>(oy) * gout.w;
            double* g0 = gxp + static_cast<std::size_t>(ty.i0) * x.w;
            double* g1 = gxp + static_cast<std::size_t>(ty.i1) * x.w;
            for (int ox = 0; ox < gout.w; ++ox) {
                const LinTap& tx = xt[ox];
                const double g = grow[ox];
                g0[tx.i0] += ty.w0 * tx.w0 * g;
                g0[tx.i1] += ty.w0 * tx.w1 * g;
                g1[tx.i0] += ty.w1 * tx.w0 * g;
                g1[tx.i1] += ty.w1 * tx.w1 * g;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// nearest_downsample2x: top-left sample of each 2x2 block. Requires even dims.
// ---------------------------------------------------------------------------

inline Tensor nearest_downsample2x_fwd(const Tensor& x) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw shape_error("nearest_downsample2x: dims must be even, got " + x.shape_str());
    Tensor out(x.c, x.h / 2, x.w / 2);
    for (int ci = 0; ci < x.c; ++ci) {
        const double* ip = x.channel(ci);
        double* op = out.channel(ci);
        for (int oy = 0; oy < out.h; ++oy)
            for (int ox = 0; ox < out.w; ++ox)
                op[static_cast<std::size_t>(oy) * out.w + ox] =
                    ip[static_cast<std::size_t>(2 * oy) * x.w + 2 * ox];
    }
    return out;
}

inline void nearest_downsample2x_bwd(const Tensor& x, const Tensor& gout, Tensor& gx) {
    for (int ci = 0; ci < x.c; ++ci) {
        const double* gp = gout.channel(ci);
        double* gxp = gx.channel(ci);
        for (int oy = 0; oy < gout.h; ++oy)
            for (int ox = 0; ox < gout.w; ++ox)
                gxp[static_cast<std::size_t>(2 * oy) * x.w + 2 * ox] +=
                    gp[static_cast<std::size_t>(oy) * gout.w + ox];
    }
}

// ---------------------------------------------------------------------------
// Elementwise maps.
// ---------------------------------------------------------------------------

inline double sigmoid_scalar(double v) {
    if (v >= 0.0) {
        const double e = std::exp(-v);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

} // namespace crs
