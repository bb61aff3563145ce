#include "bgdepth/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

namespace bgdepth {

namespace {

// ---------------------------------------------------------------------------
// Shape plumbing. Rank-4 tensors are handled as rank 5 with a leading unit
// spatial extent so the 3D kernels below cover both cases.
// ---------------------------------------------------------------------------

struct ConvDims {
    int n, cin, cout;
    int in[3];   // gathered-side spatial extents (the larger side)
    int out[3];  // strided-side spatial extents
    int k[3];
    int stride[3], pad[3];
    int spatial;  // 2 or 3, for reshaping back
};

std::vector<std::int64_t> spatial5(const std::vector<std::int64_t>& s) {
    if (s.size() == 5) return s;
    if (s.size() == 4) return {s[0], s[1], 1, s[2], s[3]};
    throw std::invalid_argument("convolution input must have rank 4 or 5");
}

int conv_out_extent(int e, int k, int stride, int pad) {
    const int span = e + 2 * pad - k;
    if (span < 0 || span % stride != 0)
        throw std::invalid_argument("convolution output extent is not a positive integer");
    return span / stride + 1;
}

// o-range such that o*stride - pad + k lands in [0, extent).
void strided_range(int extent, int o_extent, int k, int stride, int pad, int& o0, int& o1) {
    // smallest o with o*stride >= pad - k
    const int lo = pad - k;
    o0 = lo <= 0 ? 0 : (lo + stride - 1) / stride;
    // largest o with o*stride <= extent - 1 + pad - k
    const int hi = extent - 1 + pad - k;
    o1 = hi < 0 ? -1 : std::min(o_extent - 1, hi / stride);
}

// Zero-padded copy of one channel plane; pads are per axis.
void pad_channel(const double* src, double* dst, const int e[3], const int pad[3]) {
    const int pd = e[0] + 2 * pad[0], ph = e[1] + 2 * pad[1], pw = e[2] + 2 * pad[2];
    std::fill(dst, dst + static_cast<std::size_t>(pd) * ph * pw, 0.0);
    for (int d = 0; d < e[0]; ++d)
        for (int h = 0; h < e[1]; ++h) {
            double* drow = dst + (static_cast<std::size_t>(d + pad[0]) * ph + (h + pad[1])) * pw + pad[2];
            const double* srow = src + (static_cast<std::size_t>(d) * e[1] + h) * e[2];
            std::memcpy(drow, srow, static_cast<std::size_t>(e[2]) * sizeof(double));
        }
}

bool all_one(const int stride[3]) { return stride[0] == 1 && stride[1] == 1 && stride[2] == 1; }

// Stride-1 gather over a padded input: no bounds checks in the hot loops and
// full-width contiguous accumulation rows. Accumulation order per output
// element matches the generic kernel: bias first, then (src, kd, kh, kw).
void conv_gather_s1(const double* x, double* out, const double* w, int n_batch, int src_ch, int dst_ch,
                    const int in[3], const int out_e[3], const int k[3], const int pad[3]) {
    const int pd = in[0] + 2 * pad[0], ph = in[1] + 2 * pad[1], pw = in[2] + 2 * pad[2];
    const std::size_t pad_plane = static_cast<std::size_t>(pd) * ph * pw;
    const std::size_t in_plane = static_cast<std::size_t>(in[0]) * in[1] * in[2];
    const std::size_t out_plane = static_cast<std::size_t>(out_e[0]) * out_e[1] * out_e[2];
    const std::size_t ksize = static_cast<std::size_t>(k[0]) * k[1] * k[2];
    std::vector<double> xpad(static_cast<std::size_t>(src_ch) * pad_plane);
    const int ow_n = out_e[2];
    std::vector<double> accbuf(static_cast<std::size_t>(ow_n));
    double* __restrict acc = accbuf.data();
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < src_ch; ++c)
            pad_channel(x + (static_cast<std::size_t>(n) * src_ch + c) * in_plane, xpad.data() + c * pad_plane,
                        in, pad);
        for (int f = 0; f < dst_ch; ++f) {
            double* op = out + (static_cast<std::size_t>(n) * dst_ch + f) * out_plane;
            // Each output row accumulates bias, then (c, kd, kh, kw), in a
            // cache-hot buffer with a single final store.
            for (int od = 0; od < out_e[0]; ++od) {
                for (int oh = 0; oh < out_e[1]; ++oh) {
                    double* orow = op + (static_cast<std::size_t>(od) * out_e[1] + oh) * out_e[2];
                    for (int ow = 0; ow < ow_n; ++ow) acc[ow] = orow[ow];
                    for (int c = 0; c < src_ch; ++c) {
                        const double* xc = xpad.data() + static_cast<std::size_t>(c) * pad_plane;
                        const double* wp = w + (static_cast<std::size_t>(f) * src_ch + c) * ksize;
                        for (int kd = 0; kd < k[0]; ++kd) {
                            for (int kh = 0; kh < k[1]; ++kh) {
                                const double* xrow =
                                    xc + (static_cast<std::size_t>(od + kd) * ph + (oh + kh)) * pw;
                                const double* wrow = wp + (static_cast<std::size_t>(kd) * k[1] + kh) * k[2];
                                for (int kw = 0; kw < k[2]; ++kw) {
                                    const double coef = wrow[kw];
                                    const double* __restrict xr = xrow + kw;
                                    for (int ow = 0; ow < ow_n; ++ow) acc[ow] += coef * xr[ow];
                                }
                            }
                        }
                    }
                    for (int ow = 0; ow < ow_n; ++ow) orow[ow] = acc[ow];
                }
            }
        }
    }
}

// Stride-1 input gradient as a gather over the padded output gradient.
// Contribution order per input element is (f, kd, kh, kw), matching the
// generic scatter.
void conv_bwd_x_s1(const double* gout, double* gx, const double* w, int n_batch, int src_ch /*f*/,
                   int dst_ch /*c*/, const int in[3], const int out_e[3], const int k[3],
                   const int pad[3]) {
    int gpad[3], gext[3];
    for (int i = 0; i < 3; ++i) {
        gpad[i] = k[i] - 1 - pad[i];
        gext[i] = out_e[i] + 2 * gpad[i];
    }
    const std::size_t gp_plane = static_cast<std::size_t>(gext[0]) * gext[1] * gext[2];
    const std::size_t out_plane = static_cast<std::size_t>(out_e[0]) * out_e[1] * out_e[2];
    const std::size_t in_plane = static_cast<std::size_t>(in[0]) * in[1] * in[2];
    const std::size_t ksize = static_cast<std::size_t>(k[0]) * k[1] * k[2];
    std::vector<double> gpadbuf(static_cast<std::size_t>(src_ch) * gp_plane);
    for (int n = 0; n < n_batch; ++n) {
        for (int f = 0; f < src_ch; ++f)
            pad_channel(gout + (static_cast<std::size_t>(n) * src_ch + f) * out_plane,
                        gpadbuf.data() + f * gp_plane, out_e, gpad);
        const int iw_n = in[2];
        std::vector<double> accbuf(static_cast<std::size_t>(iw_n));
        double* __restrict acc = accbuf.data();
        for (int c = 0; c < dst_ch; ++c) {
            double* gxp = gx + (static_cast<std::size_t>(n) * dst_ch + c) * in_plane;
            for (int id = 0; id < in[0]; ++id) {
                for (int ih = 0; ih < in[1]; ++ih) {
                    double* gxrow = gxp + (static_cast<std::size_t>(id) * in[1] + ih) * in[2];
                    for (int iw = 0; iw < iw_n; ++iw) acc[iw] = gxrow[iw];
                    for (int f = 0; f < src_ch; ++f) {
                        const double* gf = gpadbuf.data() + static_cast<std::size_t>(f) * gp_plane;
                        const double* wp = w + (static_cast<std::size_t>(f) * dst_ch + c) * ksize;
                        for (int kd = 0; kd < k[0]; ++kd) {
                            for (int kh = 0; kh < k[1]; ++kh) {
                                const double* grow =
                                    gf + (static_cast<std::size_t>(id + k[0] - 1 - kd) * gext[1] +
                                          (ih + k[1] - 1 - kh)) *
                                             gext[2];
                                const double* wrow = wp + (static_cast<std::size_t>(kd) * k[1] + kh) * k[2];
                                for (int kw = 0; kw < k[2]; ++kw) {
                                    const double coef = wrow[kw];
                                    const double* __restrict gr = grow + (k[2] - 1 - kw);
                                    for (int iw = 0; iw < iw_n; ++iw) acc[iw] += coef * gr[iw];
                                }
                            }
                        }
                    }
                    for (int iw = 0; iw < iw_n; ++iw) gxrow[iw] = acc[iw];
                }
            }
        }
    }
}

// Stride-1 weight gradient: one sweep over the output per (a,b) pair with
// per-tap accumulators kept hot in cache.
void conv_grad_w_s1(const double* ga, const double* xb, double* gw, int n_batch, int a_ch, int b_ch,
                    const int in_e[3], const int out_e[3], const int k[3], const int pad[3]) {
    const int pd = in_e[0] + 2 * pad[0], ph = in_e[1] + 2 * pad[1], pw = in_e[2] + 2 * pad[2];
    const std::size_t pad_plane = static_cast<std::size_t>(pd) * ph * pw;
    const std::size_t in_plane = static_cast<std::size_t>(in_e[0]) * in_e[1] * in_e[2];
    const std::size_t out_plane = static_cast<std::size_t>(out_e[0]) * out_e[1] * out_e[2];
    const std::size_t ksize = static_cast<std::size_t>(k[0]) * k[1] * k[2];
    std::vector<double> xpad(static_cast<std::size_t>(n_batch) * b_ch * pad_plane);
    for (int n = 0; n < n_batch; ++n)
        for (int b = 0; b < b_ch; ++b)
            pad_channel(xb + (static_cast<std::size_t>(n) * b_ch + b) * in_plane,
                        xpad.data() + (static_cast<std::size_t>(n) * b_ch + b) * pad_plane, in_e, pad);
    std::vector<double> acc(ksize);
    const int ow_n = out_e[2];
    for (int a = 0; a < a_ch; ++a) {
        for (int b = 0; b < b_ch; ++b) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int n = 0; n < n_batch; ++n) {
                const double* gp = ga + (static_cast<std::size_t>(n) * a_ch + a) * out_plane;
                const double* xc = xpad.data() + (static_cast<std::size_t>(n) * b_ch + b) * pad_plane;
                for (int od = 0; od < out_e[0]; ++od) {
                    for (int oh = 0; oh < out_e[1]; ++oh) {
                        const double* grow = gp + (static_cast<std::size_t>(od) * out_e[1] + oh) * out_e[2];
                        for (int kd = 0; kd < k[0]; ++kd) {
                            for (int kh = 0; kh < k[1]; ++kh) {
                                const double* xrow =
                                    xc + (static_cast<std::size_t>(od + kd) * ph + (oh + kh)) * pw;
                                double* arow = acc.data() + (static_cast<std::size_t>(kd) * k[1] + kh) * k[2];
                                for (int kw = 0; kw < k[2]; ++kw) {
                                    const double* __restrict xr = xrow + kw;
                                    const double* __restrict gr = grow;
                                    // Four partial sums break the FMA latency
                                    // chain; the grouping is fixed, so the
                                    // result is still deterministic.
                                    double d0 = 0.0, d1 = 0.0, d2 = 0.0, d3 = 0.0;
                                    double d4 = 0.0, d5 = 0.0, d6 = 0.0, d7 = 0.0;
                                    int ow = 0;
                                    for (; ow + 8 <= ow_n; ow += 8) {
                                        d0 += gr[ow] * xr[ow];
                                        d1 += gr[ow + 1] * xr[ow + 1];
                                        d2 += gr[ow + 2] * xr[ow + 2];
                                        d3 += gr[ow + 3] * xr[ow + 3];
                                        d4 += gr[ow + 4] * xr[ow + 4];
                                        d5 += gr[ow + 5] * xr[ow + 5];
                                        d6 += gr[ow + 6] * xr[ow + 6];
                                        d7 += gr[ow + 7] * xr[ow + 7];
                                    }
                                    for (; ow < ow_n; ++ow) d0 += gr[ow] * xr[ow];
                                    arow[kw] += ((d0 + d1) + (d2 + d3)) + ((d4 + d5) + (d6 + d7));
                                }
                            }
                        }
                    }
                }
            }
            double* gwp = gw + (static_cast<std::size_t>(a) * b_ch + b) * ksize;
            for (std::size_t i = 0; i < ksize; ++i) gwp[i] += acc[i];
        }
    }
}

// out[n,dst,o] += sum_{src,k} w[dst,src,k] * x[n,src,i(o,k)],  i = o*s - p + k.
// Weight layout is destination-major. Accumulation order per output element
// is fixed (src, kd, kh, kw), so results are bit-reproducible.
void conv_gather_generic(const double* x, double* out, const double* w, int n_batch, int src_ch, int dst_ch,
                 const int in[3], const int out_e[3], const int k[3], const int stride[3], const int pad[3]) {
    const std::size_t in_plane = static_cast<std::size_t>(in[0]) * in[1] * in[2];
    const std::size_t out_plane = static_cast<std::size_t>(out_e[0]) * out_e[1] * out_e[2];
    const std::size_t ksize = static_cast<std::size_t>(k[0]) * k[1] * k[2];
    for (int n = 0; n < n_batch; ++n) {
        for (int f = 0; f < dst_ch; ++f) {
            double* op = out + (static_cast<std::size_t>(n) * dst_ch + f) * out_plane;
            for (int c = 0; c < src_ch; ++c) {
                const double* xp = x + (static_cast<std::size_t>(n) * src_ch + c) * in_plane;
                const double* wp = w + (static_cast<std::size_t>(f) * src_ch + c) * ksize;
                for (int kd = 0; kd < k[0]; ++kd) {
                    int od0, od1;
                    strided_range(in[0], out_e[0], kd, stride[0], pad[0], od0, od1);
                    for (int kh = 0; kh < k[1]; ++kh) {
                        int oh0, oh1;
                        strided_range(in[1], out_e[1], kh, stride[1], pad[1], oh0, oh1);
                        for (int kw = 0; kw < k[2]; ++kw) {
                            const double coef = wp[(static_cast<std::size_t>(kd) * k[1] + kh) * k[2] + kw];
                            if (coef == 0.0) continue;
                            int ow0, ow1;
                            strided_range(in[2], out_e[2], kw, stride[2], pad[2], ow0, ow1);
                            if (ow1 < ow0) continue;
                            for (int od = od0; od <= od1; ++od) {
                                const int id = od * stride[0] - pad[0] + kd;
                                for (int oh = oh0; oh <= oh1; ++oh) {
                                    const int ih = oh * stride[1] - pad[1] + kh;
                                    const double* xrow = xp + (static_cast<std::size_t>(id) * in[1] + ih) * in[2];
                                    double* orow = op + (static_cast<std::size_t>(od) * out_e[1] + oh) * out_e[2];
                                    if (stride[2] == 1) {
                                        const double* xr = xrow + (ow0 - pad[2] + kw);
                                        for (int ow = ow0; ow <= ow1; ++ow) orow[ow] += coef * xr[ow - ow0];
                                    } else {
                                        for (int ow = ow0; ow <= ow1; ++ow)
                                            orow[ow] += coef * xrow[ow * stride[2] - pad[2] + kw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// out[n,dst,i(o,k)] += sum_{src,k} w[src,dst,k] * x[n,src,o].
// Weight layout is source-major. The scatter adjoint of conv_gather.
void conv_scatter_generic(const double* x, double* out, const double* w, int n_batch, int src_ch, int dst_ch,
                  const int out_e[3] /*gathered side*/, const int in_e[3] /*strided side*/,
                  const int k[3], const int stride[3], const int pad[3]) {
    const std::size_t out_plane = static_cast<std::size_t>(out_e[0]) * out_e[1] * out_e[2];
    const std::size_t in_plane = static_cast<std::size_t>(in_e[0]) * in_e[1] * in_e[2];
    const std::size_t ksize = static_cast<std::size_t>(k[0]) * k[1] * k[2];
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < dst_ch; ++c) {
            double* op = out + (static_cast<std::size_t>(n) * dst_ch + c) * out_plane;
            for (int f = 0; f < src_ch; ++f) {
                const double* xp = x + (static_cast<std::size_t>(n) * src_ch + f) * in_plane;
                const double* wp = w + (static_cast<std::size_t>(f) * dst_ch + c) * ksize;
                for (int kd = 0; kd < k[0]; ++kd) {
                    int od0, od1;
                    strided_range(out_e[0], in_e[0], kd, stride[0], pad[0], od0, od1);
                    for (int kh = 0; kh < k[1]; ++kh) {
                        int oh0, oh1;
                        strided_range(out_e[1], in_e[1], kh, stride[1], pad[1], oh0, oh1);
                        for (int kw = 0; kw < k[2]; ++kw) {
                            const double coef = wp[(static_cast<std::size_t>(kd) * k[1] + kh) * k[2] + kw];
                            if (coef == 0.0) continue;
                            int ow0, ow1;
                            strided_range(out_e[2], in_e[2], kw, stride[2], pad[2], ow0, ow1);
                            if (ow1 < ow0) continue;
                            for (int od = od0; od <= od1; ++od) {
                                const int id = od * stride[0] - pad[0] + kd;
                                for (int oh = oh0; oh <= oh1; ++oh) {
                                    const int ih = oh * stride[1] - pad[1] + kh;
                                    double* orow = op + (static_cast<std::size_t>(id) * out_e[1] + ih) * out_e[2];
                                    const double* xrow = xp + (static_cast<std::size_t>(od) * in_e[1] + oh) * in_e[2];
                                    if (stride[2] == 1) {
                                        double* orr = orow + (ow0 - pad[2] + kw);
                                        for (int ow = ow0; ow <= ow1; ++ow) orr[ow - ow0] += coef * xrow[ow];
                                    } else {
                                        for (int ow = ow0; ow <= ow1; ++ow)
                                            orow[ow * stride[2] - pad[2] + kw] += coef * xrow[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// gw[a,b,k] += sum_{n,o} ga[n,a,o] * xb[n,b,i(o,k)].
void conv_grad_w_generic(const double* ga, const double* xb, double* gw, int n_batch, int a_ch, int b_ch,
                 const int in_e[3] /*gathered side*/, const int out_e[3] /*strided side*/,
                 const int k[3], const int stride[3], const int pad[3]) {
    const std::size_t in_plane = static_cast<std::size_t>(in_e[0]) * in_e[1] * in_e[2];
    const std::size_t out_plane = static_cast<std::size_t>(out_e[0]) * out_e[1] * out_e[2];
    const std::size_t ksize = static_cast<std::size_t>(k[0]) * k[1] * k[2];
    for (int a = 0; a < a_ch; ++a) {
        for (int b = 0; b < b_ch; ++b) {
            double* gwp = gw + (static_cast<std::size_t>(a) * b_ch + b) * ksize;
            for (int kd = 0; kd < k[0]; ++kd) {
                int od0, od1;
                strided_range(in_e[0], out_e[0], kd, stride[0], pad[0], od0, od1);
                for (int kh = 0; kh < k[1]; ++kh) {
                    int oh0, oh1;
                    strided_range(in_e[1], out_e[1], kh, stride[1], pad[1], oh0, oh1);
                    for (int kw = 0; kw < k[2]; ++kw) {
                        int ow0, ow1;
                        strided_range(in_e[2], out_e[2], kw, stride[2], pad[2], ow0, ow1);
                        if (ow1 < ow0) continue;
                        double acc = 0.0;
                        for (int n = 0; n < n_batch; ++n) {
                            const double* gp = ga + (static_cast<std::size_t>(n) * a_ch + a) * out_plane;
                            const double* xp = xb + (static_cast<std::size_t>(n) * b_ch + b) * in_plane;
                            for (int od = od0; od <= od1; ++od) {
                                const int id = od * stride[0] - pad[0] + kd;
                                for (int oh = oh0; oh <= oh1; ++oh) {
                                    const int ih = oh * stride[1] - pad[1] + kh;
                                    const double* grow = gp + (static_cast<std::size_t>(od) * out_e[1] + oh) * out_e[2];
                                    const double* xrow = xp + (static_cast<std::size_t>(id) * in_e[1] + ih) * in_e[2];
                                    if (stride[2] == 1) {
                                        const double* xr = xrow + (ow0 - pad[2] + kw);
                                        for (int ow = ow0; ow <= ow1; ++ow) acc += grow[ow] * xr[ow - ow0];
                                    } else {
                                        for (int ow = ow0; ow <= ow1; ++ow)
                                            acc += grow[ow] * xrow[ow * stride[2] - pad[2] + kw];
                                    }
                                }
                            }
                        }
                        gwp[(static_cast<std::size_t>(kd) * k[1] + kh) * k[2] + kw] += acc;
                    }
                }
            }
        }
    }
}

bool pads_admit_fast(const int k[3], const int pad[3]) {
    for (int i = 0; i < 3; ++i)
        if (k[i] - 1 - pad[i] < 0) return false;
    return true;
}

void conv_gather(const double* x, double* out, const double* w, int n_batch, int src_ch, int dst_ch,
                 const int in[3], const int out_e[3], const int k[3], const int stride[3],
                 const int pad[3]) {
    if (all_one(stride) && out_e[2] >= 8) {
        conv_gather_s1(x, out, w, n_batch, src_ch, dst_ch, in, out_e, k, pad);
        return;
    }
    conv_gather_generic(x, out, w, n_batch, src_ch, dst_ch, in, out_e, k, stride, pad);
}

void conv_scatter(const double* x, double* out, const double* w, int n_batch, int src_ch, int dst_ch,
                  const int out_e[3], const int in_e[3], const int k[3], const int stride[3],
                  const int pad[3]) {
    if (all_one(stride) && pads_admit_fast(k, pad) && out_e[2] >= 8) {
        conv_bwd_x_s1(x, out, w, n_batch, src_ch, dst_ch, out_e, in_e, k, pad);
        return;
    }
    conv_scatter_generic(x, out, w, n_batch, src_ch, dst_ch, out_e, in_e, k, stride, pad);
}

void conv_grad_w(const double* ga, const double* xb, double* gw, int n_batch, int a_ch, int b_ch,
                 const int in_e[3], const int out_e[3], const int k[3], const int stride[3],
                 const int pad[3]) {
    if (all_one(stride) && out_e[2] >= 8) {
        conv_grad_w_s1(ga, xb, gw, n_batch, a_ch, b_ch, in_e, out_e, k, pad);
        return;
    }
    conv_grad_w_generic(ga, xb, gw, n_batch, a_ch, b_ch, in_e, out_e, k, stride, pad);
}

void add_bias(double* out, const double* b, int n_batch, int channels, std::size_t plane) {
    for (int n = 0; n < n_batch; ++n)
        for (int c = 0; c < channels; ++c) {
            double* op = out + (static_cast<std::size_t>(n) * channels + c) * plane;
            const double bv = b[c];
            for (std::size_t i = 0; i < plane; ++i) op[i] += bv;
        }
}

void bias_grad(const double* gout, double* gb, int n_batch, int channels, std::size_t plane) {
    for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int n = 0; n < n_batch; ++n) {
            const double* gp = gout + (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
        }
        gb[c] += acc;
    }
}

bool maybe_record(std::initializer_list<const Tensor*> inputs, const Tensor& out) {
    Tape* tape = Tape::active();
    if (!tape) return false;
    bool any = false;
    for (const Tensor* t : inputs)
        if (t && t->defined() && t->requires_grad()) any = true;
    if (!any) return false;
    const_cast<Tensor&>(out).set_requires_grad(true);
    out.grad();  // allocate so closures can read it
    for (const Tensor* t : inputs)
        if (t && t->defined() && t->requires_grad()) t->grad();
    return true;
}

Tensor conv_impl(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, int spatial) {
    const auto xs = spatial5(x.shape());
    if (w.rank() != spatial + 2) throw std::invalid_argument("convolution weight rank mismatch");
    const auto ws = spatial5(w.shape());
    ConvDims d{};
    d.spatial = spatial;
    d.n = static_cast<int>(xs[0]);
    d.cin = static_cast<int>(xs[1]);
    d.cout = static_cast<int>(ws[0]);
    if (static_cast<int>(ws[1]) != d.cin) throw std::invalid_argument("convolution channel mismatch");
    if (!b.defined() || b.numel() != d.cout) throw std::invalid_argument("convolution bias mismatch");
    for (int i = 0; i < 3; ++i) {
        const bool fake = spatial == 2 && i == 0;  // synthetic unit depth axis
        d.stride[i] = fake ? 1 : stride;
        d.pad[i] = fake ? 0 : pad;
        d.in[i] = static_cast<int>(xs[2 + i]);
        d.k[i] = static_cast<int>(ws[2 + i]);
        d.out[i] = conv_out_extent(d.in[i], d.k[i], d.stride[i], d.pad[i]);
    }

    std::vector<std::int64_t> oshape = spatial == 3
        ? std::vector<std::int64_t>{d.n, d.cout, d.out[0], d.out[1], d.out[2]}
        : std::vector<std::int64_t>{d.n, d.cout, d.out[1], d.out[2]};
    Tensor out(oshape);
    const std::size_t out_plane = static_cast<std::size_t>(d.out[0]) * d.out[1] * d.out[2];
    add_bias(out.data(), b.data(), d.n, d.cout, out_plane);
    conv_gather(x.data(), out.data(), w.data(), d.n, d.cin, d.cout, d.in, d.out, d.k, d.stride, d.pad);

    if (maybe_record({&x, &w, &b}, out)) {
        Tape::active()->record([x, w, b, out, d] {
            const double* gout = out.grad();
            const std::size_t oplane = static_cast<std::size_t>(d.out[0]) * d.out[1] * d.out[2];
            if (b.requires_grad()) bias_grad(gout, b.grad(), d.n, d.cout, oplane);
            if (w.requires_grad())
                conv_grad_w(gout, x.data(), w.grad(), d.n, d.cout, d.cin, d.in, d.out, d.k, d.stride, d.pad);
            if (x.requires_grad())
                conv_scatter(gout, x.grad(), w.data(), d.n, d.cout, d.cin, d.in, d.out, d.k, d.stride, d.pad);
        });
    }
    return out;
}

Tensor conv_transpose_impl(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                           int spatial) {
    const auto xs = spatial5(x.shape());
    if (w.rank() != spatial + 2) throw std::invalid_argument("transposed convolution weight rank mismatch");
    const auto ws = spatial5(w.shape());
    ConvDims d{};
    d.spatial = spatial;
    d.n = static_cast<int>(xs[0]);
    d.cin = static_cast<int>(xs[1]);               // source channels
    d.cout = static_cast<int>(ws[1]);              // destination channels
    if (static_cast<int>(ws[0]) != d.cin) throw std::invalid_argument("transposed convolution channel mismatch");
    if (!b.defined() || b.numel() != d.cout) throw std::invalid_argument("transposed convolution bias mismatch");
    for (int i = 0; i < 3; ++i) {
        const bool fake = spatial == 2 && i == 0;
        d.stride[i] = fake ? 1 : stride;
        d.pad[i] = fake ? 0 : pad;
        d.out[i] = static_cast<int>(xs[2 + i]);    // strided side = input
        d.k[i] = static_cast<int>(ws[2 + i]);
        d.in[i] = (d.out[i] - 1) * d.stride[i] - 2 * d.pad[i] + d.k[i];  // gathered side = output
        if (d.in[i] < 1) throw std::invalid_argument("transposed convolution output extent not positive");
    }

    std::vector<std::int64_t> oshape = spatial == 3
        ? std::vector<std::int64_t>{d.n, d.cout, d.in[0], d.in[1], d.in[2]}
        : std::vector<std::int64_t>{d.n, d.cout, d.in[1], d.in[2]};
    Tensor out(oshape);
    const std::size_t out_plane = static_cast<std::size_t>(d.in[0]) * d.in[1] * d.in[2];
    add_bias(out.data(), b.data(), d.n, d.cout, out_plane);
    conv_scatter(x.data(), out.data(), w.data(), d.n, d.cin, d.cout, d.in, d.out, d.k, d.stride, d.pad);

    if (maybe_record({&x, &w, &b}, out)) {
        Tape::active()->record([x, w, b, out, d] {
            const double* gout = out.grad();
            const std::size_t oplane = static_cast<std::size_t>(d.in[0]) * d.in[1] * d.in[2];
            if (b.requires_grad()) bias_grad(gout, b.grad(), d.n, d.cout, oplane);
            if (w.requires_grad())
                conv_grad_w(x.data(), gout, w.grad(), d.n, d.cin, d.cout, d.in, d.out, d.k, d.stride, d.pad);
            if (x.requires_grad())
                conv_gather(gout, x.grad(), w.data(), d.n, d.cout, d.cin, d.in, d.out, d.k, d.stride, d.pad);
        });
    }
    return out;
}

Tensor maxpool_impl(const Tensor& x, int kernel, int spatial) {
    if (kernel < 1) throw std::invalid_argument("maxpool kernel must be >= 1");
    const auto xs = spatial5(x.shape());
    const int n_batch = static_cast<int>(xs[0]);
    const int channels = static_cast<int>(xs[1]);
    int in_e[3], out_e[3];
    for (int i = 0; i < 3; ++i) {
        in_e[i] = static_cast<int>(xs[2 + i]);
        const int k = (spatial == 2 && i == 0) ? 1 : kernel;
        if (in_e[i] % k != 0)
            throw std::invalid_argument("maxpool requires spatial extents divisible by the kernel");
        out_e[i] = in_e[i] / k;
    }
    std::vector<std::int64_t> oshape = spatial == 3
        ? std::vector<std::int64_t>{n_batch, channels, out_e[0], out_e[1], out_e[2]}
        : std::vector<std::int64_t>{n_batch, channels, out_e[1], out_e[2]};
    Tensor out(oshape);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));

    const int kd = (spatial == 2) ? 1 : kernel;
    const std::size_t in_plane = static_cast<std::size_t>(in_e[0]) * in_e[1] * in_e[2];
    const double* xp = x.data();
    double* op = out.data();
    std::size_t oi = 0;
    for (int nc = 0; nc < n_batch * channels; ++nc) {
        const double* base = xp + nc * in_plane;
        for (int od = 0; od < out_e[0]; ++od)
            for (int oh = 0; oh < out_e[1]; ++oh)
                for (int ow = 0; ow < out_e[2]; ++ow) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t best_i = -1;
                    for (int dd = 0; dd < kd; ++dd)
                        for (int dh = 0; dh < kernel; ++dh)
                            for (int dw = 0; dw < kernel; ++dw) {
                                const std::size_t ii =
                                    (static_cast<std::size_t>(od * kd + dd) * in_e[1] + (oh * kernel + dh)) *
                                        in_e[2] +
                                    (ow * kernel + dw);
                                if (base[ii] > best) {  // strict: first max in scan order wins
                                    best = base[ii];
                                    best_i = static_cast<std::int64_t>(nc * in_plane + ii);
                                }
                            }
                    op[oi] = best;
                    (*argmax)[oi] = best_i;
                    ++oi;
                }
    }

    if (maybe_record({&x}, out)) {
        Tape::active()->record([x, out, argmax] {
            const double* gout = out.grad();
            double* gx = x.grad();
            for (std::int64_t i = 0; i < out.numel(); ++i) gx[(*argmax)[i]] += gout[i];
        });
    }
    return out;
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.rank() != 5) throw std::invalid_argument("conv3d expects a rank-5 input");
    return conv_impl(x, w, b, stride, pad, 3);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.rank() != 4) throw std::invalid_argument("conv2d expects a rank-4 input");
    return conv_impl(x, w, b, stride, pad, 2);
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.rank() != 5) throw std::invalid_argument("conv_transpose3d expects a rank-5 input");
    return conv_transpose_impl(x, w, b, stride, pad, 3);
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.rank() != 4) throw std::invalid_argument("conv_transpose2d expects a rank-4 input");
    return conv_transpose_impl(x, w, b, stride, pad, 2);
}

Tensor maxpool3d(const Tensor& x, int kernel) {
    if (x.rank() != 5) throw std::invalid_argument("maxpool3d expects a rank-5 input");
    return maxpool_impl(x, kernel, 3);
}

Tensor maxpool2d(const Tensor& x, int kernel) {
    if (x.rank() != 4) throw std::invalid_argument("maxpool2d expects a rank-4 input");
    return maxpool_impl(x, kernel, 2);
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                 Tensor running_var, const BatchNormOpts& opts) {
    if (x.rank() < 3) throw std::invalid_argument("batchnorm expects rank >= 3 input");
    const int channels = static_cast<int>(x.dim(1));
    if (gamma.numel() != channels || beta.numel() != channels || running_mean.numel() != channels ||
        running_var.numel() != channels)
        throw std::invalid_argument("batchnorm parameter size mismatch");
    const std::int64_t n_batch = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.numel() / (n_batch * channels));
    const std::size_t m = static_cast<std::size_t>(n_batch) * plane;  // samples per channel
    if (opts.training && m < 2)
        throw std::invalid_argument("batchnorm training mode needs >= 2 samples per channel");

    Tensor out(x.shape());
    auto mean = std::make_shared<std::vector<double>>(channels, 0.0);
    auto istd = std::make_shared<std::vector<double>>(channels, 0.0);

    const double* xp = x.data();
    double* op = out.data();
    for (int c = 0; c < channels; ++c) {
        double mu, var;
        if (opts.training) {
            double s = 0.0;
            for (std::int64_t n = 0; n < n_batch; ++n) {
                const double* p = xp + (static_cast<std::size_t>(n) * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            mu = s / static_cast<double>(m);
            double v = 0.0;
            for (std::int64_t n = 0; n < n_batch; ++n) {
                const double* p = xp + (static_cast<std::size_t>(n) * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    v += d * d;
                }
            }
            var = v / static_cast<double>(m);
            if (opts.update_running) {
                const double unbiased = v / static_cast<double>(m - 1);
                running_mean.data()[c] = (1.0 - opts.momentum) * running_mean.data()[c] + opts.momentum * mu;
                running_var.data()[c] = (1.0 - opts.momentum) * running_var.data()[c] + opts.momentum * unbiased;
            }
        } else {
            mu = running_mean.data()[c];
            var = running_var.data()[c];
        }
        const double is = 1.0 / std::sqrt(var + opts.eps);
        (*mean)[c] = mu;
        (*istd)[c] = is;
        const double g = gamma.data()[c];
        const double bt = beta.data()[c];
        for (std::int64_t n = 0; n < n_batch; ++n) {
            const double* p = xp + (static_cast<std::size_t>(n) * channels + c) * plane;
            double* q = op + (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * is + bt;
        }
    }

    if (maybe_record({&x, &gamma, &beta}, out)) {
        const bool training = opts.training;
        Tape::active()->record([x, gamma, beta, out, mean, istd, training, n_batch, channels, plane, m] {
            const double* gout = out.grad();
            const double* xp2 = x.data();
            for (int c = 0; c < channels; ++c) {
                const double mu = (*mean)[c];
                const double is = (*istd)[c];
                double sum_gy = 0.0, sum_gy_xhat = 0.0;
                for (std::int64_t n = 0; n < n_batch; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double gy = gout[off + i];
                        sum_gy += gy;
                        sum_gy_xhat += gy * (xp2[off + i] - mu) * is;
                    }
                }
                if (beta.requires_grad()) beta.grad()[c] += sum_gy;
                if (gamma.requires_grad()) gamma.grad()[c] += sum_gy_xhat;
                if (x.requires_grad()) {
                    double* gx = x.grad();
                    const double g = gamma.data()[c];
                    if (training) {
                        const double inv_m = 1.0 / static_cast<double>(m);
                        for (std::int64_t n = 0; n < n_batch; ++n) {
                            const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i) {
                                const double xhat = (xp2[off + i] - mu) * is;
                                gx[off + i] +=
                                    g * is * (gout[off + i] - inv_m * sum_gy - xhat * inv_m * sum_gy_xhat);
                            }
                        }
                    } else {
                        for (std::int64_t n = 0; n < n_batch; ++n) {
                            const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i) gx[off + i] += g * is * gout[off + i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const double* xp = x.data();
    double* op = out.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) op[i] = xp[i] > 0.0 ? xp[i] : 0.0;
    if (maybe_record({&x}, out)) {
        Tape::active()->record([x, out] {
            const double* gout = out.grad();
            const double* xp2 = x.data();
            double* gx = x.grad();
            for (std::int64_t i = 0; i < x.numel(); ++i)
                if (xp2[i] > 0.0) gx[i] += gout[i];
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    const double* xp = x.data();
    double* op = out.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) op[i] = 1.0 / (1.0 + std::exp(-xp[i]));
    if (maybe_record({&x}, out)) {
        Tape::active()->record([x, out] {
            const double* gout = out.grad();
            const double* y = out.data();
            double* gx = x.grad();
            for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += gout[i] * y[i] * (1.0 - y[i]);
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    Tensor out(a.shape());
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) op[i] = ap[i] + bp[i];
    if (maybe_record({&a, &b}, out)) {
        Tape::active()->record([a, b, out] {
            const double* gout = out.grad();
            if (a.requires_grad()) {
                double* ga = a.grad();
                for (std::int64_t i = 0; i < a.numel(); ++i) ga[i] += gout[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad();
                for (std::int64_t i = 0; i < b.numel(); ++i) gb[i] += gout[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double s) {
    Tensor out(x.shape());
    const double* xp = x.data();
    double* op = out.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) op[i] = xp[i] * s;
    if (maybe_record({&x}, out)) {
        Tape::active()->record([x, out, s] {
            const double* gout = out.grad();
            double* gx = x.grad();
            for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += gout[i] * s;
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out({1});
    double acc = 0.0;
    const double* xp = x.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += xp[i];
    out.data()[0] = acc;
    if (maybe_record({&x}, out)) {
        Tape::active()->record([x, out] {
            const double g = out.grad()[0];
            double* gx = x.grad();
            for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor concat(std::span<const Tensor> xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: no inputs");
    const int rank = xs[0].rank();
    if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: bad axis");
    std::vector<std::int64_t> oshape = xs[0].shape();
    std::int64_t total = 0;
    for (const Tensor& t : xs) {
        if (t.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis && t.dim(i) != oshape[static_cast<std::size_t>(i)])
                throw std::invalid_argument("concat: extent mismatch off the concat axis");
        total += t.dim(axis);
    }
    oshape[static_cast<std::size_t>(axis)] = total;
    Tensor out(oshape);

    // outer = product of dims before axis, inner = product after.
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= oshape[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) inner *= oshape[static_cast<std::size_t>(i)];

    std::int64_t offset = 0;
    for (const Tensor& t : xs) {
        const std::int64_t extent = t.dim(axis);
        for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = t.data() + o * extent * inner;
            double* dst = out.data() + (o * total + offset) * inner;
            std::memcpy(dst, src, static_cast<std::size_t>(extent * inner) * sizeof(double));
        }
        offset += extent;
    }

    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : xs) ptrs.push_back(&t);
    Tape* tape = Tape::active();
    bool any = false;
    for (const Tensor& t : xs) any = any || t.requires_grad();
    if (tape && any) {
        const_cast<Tensor&>(out).set_requires_grad(true);
        out.grad();
        std::vector<Tensor> inputs(xs.begin(), xs.end());
        for (const Tensor& t : inputs)
            if (t.requires_grad()) t.grad();
        tape->record([inputs, out, axis, outer, inner, total] {
            const double* gout = out.grad();
            std::int64_t offset2 = 0;
            for (const Tensor& t : inputs) {
                const std::int64_t extent = t.dim(axis);
                if (t.requires_grad()) {
                    double* gt = t.grad();
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const double* src = gout + (o * total + offset2) * inner;
                        double* dst = gt + o * extent * inner;
                        for (std::int64_t i = 0; i < extent * inner; ++i) dst[i] += src[i];
                    }
                }
                offset2 += extent;
            }
        });
    }
    return out;
}

Tensor concat(std::initializer_list<Tensor> xs, int axis) {
    std::vector<Tensor> v(xs);
    return concat(std::span<const Tensor>(v.data(), v.size()), axis);
}

Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
    const int rank = x.rank();
    if (axis < 0 || axis >= rank) throw std::invalid_argument("narrow: bad axis");
    if (start < 0 || length < 1 || start + length > x.dim(axis))
        throw std::invalid_argument("narrow: range out of bounds");
    std::vector<std::int64_t> oshape = x.shape();
    oshape[static_cast<std::size_t>(axis)] = length;
    Tensor out(oshape);

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < rank; ++i) inner *= x.dim(i);
    const std::int64_t extent = x.dim(axis);
    for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = x.data() + (o * extent + start) * inner;
        double* dst = out.data() + o * length * inner;
        std::memcpy(dst, src, static_cast<std::size_t>(length * inner) * sizeof(double));
    }

    if (maybe_record({&x}, out)) {
        Tape::active()->record([x, out, start, length, outer, inner, extent] {
            const double* gout = out.grad();
            double* gx = x.grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                const double* src = gout + o * length * inner;
                double* dst = gx + (o * extent + start) * inner;
                for (std::int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

Tensor mse(const Tensor& pred, const Tensor& target, const Tensor* mask) {
    if (pred.shape() != target.shape()) throw std::invalid_argument("mse: shape mismatch");
    if (mask && mask->shape() != pred.shape()) throw std::invalid_argument("mse: mask shape mismatch");
    std::int64_t n = 0;
    double acc = 0.0;
    const double* pp = pred.data();
    const double* tp = target.data();
    const double* mp = mask ? mask->data() : nullptr;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        if (mp && mp[i] == 0.0) continue;
        const double d = pp[i] - tp[i];
        acc += d * d;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("mse: no valid elements under mask");
    Tensor out({1});
    out.data()[0] = acc / static_cast<double>(n);

    if (maybe_record({&pred}, out)) {
        Tensor mask_copy = mask ? *mask : Tensor();
        const bool has_mask = mask != nullptr;
        Tape::active()->record([pred, target, out, mask_copy, has_mask, n] {
            const double g = out.grad()[0] * 2.0 / static_cast<double>(n);
            double* gp = pred.grad();
            const double* pp2 = pred.data();
            const double* tp2 = target.data();
            const double* mp2 = has_mask ? mask_copy.data() : nullptr;
            for (std::int64_t i = 0; i < pred.numel(); ++i) {
                if (mp2 && mp2[i] == 0.0) continue;
                gp[i] += g * (pp2[i] - tp2[i]);
            }
        });
    }
    return out;
}

Tensor slice_grid(const Tensor& grid, const SlicePlan& plan) {
    if (grid.rank() != 5 || grid.dim(0) != 1) throw std::invalid_argument("slice_grid expects (1,C,nb,ny,nx)");
    if (grid.dim(1) != plan.channels || grid.dim(2) != plan.nb || grid.dim(3) != plan.ny ||
        grid.dim(4) != plan.nx)
        throw std::invalid_argument("slice_grid: plan/grid dimension mismatch");
    const std::size_t pixels = static_cast<std::size_t>(plan.width) * plan.height;
    const std::size_t voxels = static_cast<std::size_t>(plan.nx) * plan.ny * plan.nb;
    Tensor out({1, plan.channels, plan.height, plan.width});
    const double* gp = grid.data();
    double* op = out.data();
    for (int c = 0; c < plan.channels; ++c) {
        const double* gc = gp + static_cast<std::size_t>(c) * voxels;
        for (std::size_t px = 0; px < pixels; ++px) {
            const std::size_t base = (static_cast<std::size_t>(c) * pixels + px) * 8;
            double v = 0.0;
            for (int j = 0; j < 8; ++j)
                v += plan.corner_weight[base + j] * gc[plan.corner_index[base + j]];
            op[c * pixels + px] = v;
        }
    }
    if (maybe_record({&grid}, out)) {
        const SlicePlan* pp = &plan;  // plans outlive tapes in all call sites; copy to be safe
        SlicePlan plan_copy = *pp;
        Tape::active()->record([grid, out, plan_copy, pixels, voxels] {
            const double* gout = out.grad();
            double* gg = grid.grad();
            for (int c = 0; c < plan_copy.channels; ++c) {
                double* gc = gg + static_cast<std::size_t>(c) * voxels;
                for (std::size_t px = 0; px < pixels; ++px) {
                    const std::size_t base = (static_cast<std::size_t>(c) * pixels + px) * 8;
                    const double g = gout[c * pixels + px];
                    for (int j = 0; j < 8; ++j)
                        gc[plan_copy.corner_index[base + j]] += g * plan_copy.corner_weight[base + j];
                }
            }
        });
    }
    return out;
}

Tensor channel_weighted_sum(const Tensor& x, std::span<const double> weights) {
    if (x.rank() != 4 || x.dim(0) != 1) throw std::invalid_argument("channel_weighted_sum expects (1,C,H,W)");
    const int channels = static_cast<int>(x.dim(1));
    if (static_cast<int>(weights.size()) != channels)
        throw std::invalid_argument("channel_weighted_sum: weight count mismatch");
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    Tensor out({1, 1, x.dim(2), x.dim(3)});
    const double* xp = x.data();
    double* op = out.data();
    for (std::size_t i = 0; i < plane; ++i) {
        double v = 0.0;
        for (int c = 0; c < channels; ++c) v += weights[c] * xp[c * plane + i];
        op[i] = v;
    }
    if (maybe_record({&x}, out)) {
        std::vector<double> w(weights.begin(), weights.end());
        Tape::active()->record([x, out, w, plane, channels] {
            const double* gout = out.grad();
            double* gx = x.grad();
            for (std::size_t i = 0; i < plane; ++i)
                for (int c = 0; c < channels; ++c) gx[c * plane + i] += w[c] * gout[i];
        });
    }
    return out;
}

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double eps) {
    std::vector<std::vector<double>> analytic;
    {
        for (Tensor& t : inputs) t.zero_grad();
        Tape tape;
        Tensor loss = f();
        tape.backward(loss);
        for (Tensor& t : inputs)
            analytic.emplace_back(t.grad(), t.grad() + t.numel());
        for (Tensor& t : inputs) t.zero_grad();
    }
    double max_err = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor& t = inputs[ti];
        double* p = t.data();
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            const double orig = p[i];
            p[i] = orig + eps;
            const double fp = f().item();
            p[i] = orig - eps;
            const double fm = f().item();
            p[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            max_err = std::max(max_err, relative_error(analytic[ti][static_cast<std::size_t>(i)], numeric));
        }
    }
    return max_err;
}

}  // namespace bgdepth
