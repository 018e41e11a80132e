#include "reloc/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace reloc::kernels {

Backend& active_backend() {
    static Backend be = Backend::OpenMP;
    return be;
}

int conv_out_extent(int in, int k, int stride, int pad) {
    const int span = in + 2 * pad - k;
    if (span < 0 || span % stride != 0)
        throw std::invalid_argument("conv: extent " + std::to_string(in) +
                                    " incompatible with k=" + std::to_string(k) +
                                    " stride=" + std::to_string(stride) +
                                    " pad=" + std::to_string(pad));
    return span / stride + 1;
}

namespace {

inline int floor_div(int a, int b) {  // b > 0
    const int q = a / b;
    return q * b > a ? q - 1 : q;
}
inline int ceil_div(int a, int b) { return -floor_div(-a, b); }

// Out-of-bounds taps contribute nothing, so restricting the loops to the
// valid kernel ranges keeps the floating-point summation order identical to
// the naive triple loop.
inline double conv_cell(const Tensor& in, const Tensor& w, const std::vector<double>& b,
                        ConvShape cs, int i, int oc, int oy, int ox) {
    const int kh = w.h, kw = w.w, ci = w.c;
    const int y0 = oy * cs.stride - cs.pad;
    const int x0 = ox * cs.stride - cs.pad;
    const int ky_lo = std::max(0, -y0), ky_hi = std::min(kh, in.h - y0);
    const int kx_lo = std::max(0, -x0), kx_hi = std::min(kw, in.w - x0);
    double acc = b[oc];
    const double* in_base = in.v.data() + static_cast<size_t>(i) * in.c * in.h * in.w;
    const double* w_base = w.v.data() + static_cast<size_t>(oc) * ci * kh * kw;
    for (int ic = 0; ic < ci; ++ic) {
        const double* in_plane = in_base + static_cast<size_t>(ic) * in.h * in.w;
        const double* w_plane = w_base + static_cast<size_t>(ic) * kh * kw;
        for (int ky = ky_lo; ky < ky_hi; ++ky) {
            const double* in_row = in_plane + static_cast<size_t>(y0 + ky) * in.w + x0;
            const double* w_row = w_plane + static_cast<size_t>(ky) * kw;
            for (int kx = kx_lo; kx < kx_hi; ++kx) acc += in_row[kx] * w_row[kx];
        }
    }
    return acc;
}

inline double conv_bwd_input_cell(const Tensor& gout, const Tensor& w, ConvShape cs,
                                  int i, int ic, int y, int x) {
    const int kh = w.h, kw = w.w, co = w.n;
    const int s = cs.stride;
    // valid taps: ky == (y+pad) mod s stepping by s, with oy = (y+pad-ky)/s in range
    const int yp = y + cs.pad;
    const int xp = x + cs.pad;
    const int ky_start = yp % s;
    const int kx_start = xp % s;
    const int ky_min = std::max(ky_start, yp - (gout.h - 1) * s);
    const int kx_min = std::max(kx_start, xp - (gout.w - 1) * s);
    double acc = 0.0;
    const double* g_base = gout.v.data() + static_cast<size_t>(i) * gout.c * gout.h * gout.w;
    for (int oc = 0; oc < co; ++oc) {
        const double* g_plane = g_base + static_cast<size_t>(oc) * gout.h * gout.w;
        const double* w_plane = w.v.data() + (static_cast<size_t>(oc) * w.c + ic) * kh * kw;
        for (int ky = ky_start; ky < kh && ky <= yp; ky += s) {
            if (ky < ky_min) continue;
            const int oy = (yp - ky) / s;
            const double* g_row = g_plane + static_cast<size_t>(oy) * gout.w;
            const double* w_row = w_plane + static_cast<size_t>(ky) * kw;
            for (int kx = kx_start; kx < kw && kx <= xp; kx += s) {
                if (kx < kx_min) continue;
                acc += g_row[(xp - kx) / s] * w_row[kx];
            }
        }
    }
    return acc;
}

inline double conv_bwd_weight_cell(const Tensor& gout, const Tensor& in, ConvShape cs,
                                   int oc, int ic, int ky, int kx) {
    const int s = cs.stride;
    const int oy_lo = std::max(0, ceil_div(cs.pad - ky, s));
    const int oy_hi = std::min(gout.h - 1, floor_div(in.h - 1 + cs.pad - ky, s));
    const int ox_lo = std::max(0, ceil_div(cs.pad - kx, s));
    const int ox_hi = std::min(gout.w - 1, floor_div(in.w - 1 + cs.pad - kx, s));
    double acc = 0.0;
    for (int i = 0; i < gout.n; ++i) {
        const double* g_plane =
            gout.v.data() + (static_cast<size_t>(i) * gout.c + oc) * gout.h * gout.w;
        const double* in_plane = in.v.data() + (static_cast<size_t>(i) * in.c + ic) * in.h * in.w;
        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
            const double* g_row = g_plane + static_cast<size_t>(oy) * gout.w;
            const double* in_row =
                in_plane + static_cast<size_t>(oy * s + ky - cs.pad) * in.w + (kx - cs.pad);
            for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += g_row[ox] * in_row[ox * s];
        }
    }
    return acc;
}

}  // namespace

Tensor conv2d_forward_serial(const Tensor& in, const Tensor& w,
                             const std::vector<double>& b, ConvShape cs) {
    const int ho = conv_out_extent(in.h, w.h, cs.stride, cs.pad);
    const int wo = conv_out_extent(in.w, w.w, cs.stride, cs.pad);
    Tensor out(in.n, w.n, ho, wo);
    for (int i = 0; i < in.n; ++i)
        for (int oc = 0; oc < w.n; ++oc)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox)
                    out.at(i, oc, oy, ox) = conv_cell(in, w, b, cs, i, oc, oy, ox);
    return out;
}

Tensor conv2d_forward_omp(const Tensor& in, const Tensor& w,
                          const std::vector<double>& b, ConvShape cs) {
    const int ho = conv_out_extent(in.h, w.h, cs.stride, cs.pad);
    const int wo = conv_out_extent(in.w, w.w, cs.stride, cs.pad);
    Tensor out(in.n, w.n, ho, wo);
    const int planes = in.n * w.n;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const int i = p / w.n;
        const int oc = p % w.n;
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox)
                out.at(i, oc, oy, ox) = conv_cell(in, w, b, cs, i, oc, oy, ox);
    }
    return out;
}

Tensor conv2d_forward(const Tensor& in, const Tensor& w,
                      const std::vector<double>& b, ConvShape cs) {
    return active_backend() == Backend::OpenMP ? conv2d_forward_omp(in, w, b, cs)
                                               : conv2d_forward_serial(in, w, b, cs);
}

Tensor conv2d_backward_input_serial(const Tensor& gout, const Tensor& w,
                                    int in_h, int in_w, ConvShape cs) {
    Tensor gin(gout.n, w.c, in_h, in_w);
    for (int i = 0; i < gout.n; ++i)
        for (int ic = 0; ic < w.c; ++ic)
            for (int y = 0; y < in_h; ++y)
                for (int x = 0; x < in_w; ++x)
                    gin.at(i, ic, y, x) = conv_bwd_input_cell(gout, w, cs, i, ic, y, x);
    return gin;
}

Tensor conv2d_backward_input_omp(const Tensor& gout, const Tensor& w,
                                 int in_h, int in_w, ConvShape cs) {
    Tensor gin(gout.n, w.c, in_h, in_w);
    const int planes = gout.n * w.c;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const int i = p / w.c;
        const int ic = p % w.c;
        for (int y = 0; y < in_h; ++y)
            for (int x = 0; x < in_w; ++x)
                gin.at(i, ic, y, x) = conv_bwd_input_cell(gout, w, cs, i, ic, y, x);
    }
    return gin;
}

Tensor conv2d_backward_input(const Tensor& gout, const Tensor& w,
                             int in_h, int in_w, ConvShape cs) {
    return active_backend() == Backend::OpenMP
               ? conv2d_backward_input_omp(gout, w, in_h, in_w, cs)
               : conv2d_backward_input_serial(gout, w, in_h, in_w, cs);
}

void conv2d_backward_params_serial(const Tensor& gout, const Tensor& in, ConvShape cs,
                                   Tensor& gw, std::vector<double>& gb) {
    for (int oc = 0; oc < gw.n; ++oc)
        for (int ic = 0; ic < gw.c; ++ic)
            for (int ky = 0; ky < gw.h; ++ky)
                for (int kx = 0; kx < gw.w; ++kx)
                    gw.at(oc, ic, ky, kx) += conv_bwd_weight_cell(gout, in, cs, oc, ic, ky, kx);
    for (int oc = 0; oc < gw.n; ++oc) {
        double acc = 0.0;
        for (int i = 0; i < gout.n; ++i)
            for (int oy = 0; oy < gout.h; ++oy)
                for (int ox = 0; ox < gout.w; ++ox) acc += gout.at(i, oc, oy, ox);
        gb[oc] += acc;
    }
}

void conv2d_backward_params_omp(const Tensor& gout, const Tensor& in, ConvShape cs,
                                Tensor& gw, std::vector<double>& gb) {
    const int cells = gw.n * gw.c * gw.h * gw.w;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < cells; ++t) {
        const int kx = t % gw.w;
        const int ky = (t / gw.w) % gw.h;
        const int ic = (t / (gw.w * gw.h)) % gw.c;
        const int oc = t / (gw.w * gw.h * gw.c);
        gw.at(oc, ic, ky, kx) += conv_bwd_weight_cell(gout, in, cs, oc, ic, ky, kx);
    }
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < gw.n; ++oc) {
        double acc = 0.0;
        for (int i = 0; i < gout.n; ++i)
            for (int oy = 0; oy < gout.h; ++oy)
                for (int ox = 0; ox < gout.w; ++ox) acc += gout.at(i, oc, oy, ox);
        gb[oc] += acc;
    }
}

void conv2d_backward_params(const Tensor& gout, const Tensor& in, ConvShape cs,
                            Tensor& gw, std::vector<double>& gb) {
    if (active_backend() == Backend::OpenMP)
        conv2d_backward_params_omp(gout, in, cs, gw, gb);
    else
        conv2d_backward_params_serial(gout, in, cs, gw, gb);
}

Tensor leaky_relu_forward_serial(const Tensor& x, double slope) {
    Tensor y = x;
    for (double& e : y.v) e = e > 0.0 ? e : slope * e;
    return y;
}

Tensor leaky_relu_forward_omp(const Tensor& x, double slope) {
    Tensor y = x;
    const long long total = static_cast<long long>(y.size());
#pragma omp parallel for schedule(static)
    for (long long t = 0; t < total; ++t) {
        const double e = y.v[t];
        y.v[t] = e > 0.0 ? e : slope * e;
    }
    return y;
}

Tensor leaky_relu_forward(const Tensor& x, double slope) {
    return active_backend() == Backend::OpenMP ? leaky_relu_forward_omp(x, slope)
                                               : leaky_relu_forward_serial(x, slope);
}

Tensor leaky_relu_backward_serial(const Tensor& x, const Tensor& gy, double slope) {
    Tensor gx = gy;
    for (size_t t = 0; t < gx.size(); ++t) gx.v[t] *= x.v[t] > 0.0 ? 1.0 : slope;
    return gx;
}

Tensor leaky_relu_backward_omp(const Tensor& x, const Tensor& gy, double slope) {
    Tensor gx = gy;
    const long long total = static_cast<long long>(gx.size());
#pragma omp parallel for schedule(static)
    for (long long t = 0; t < total; ++t) gx.v[t] *= x.v[t] > 0.0 ? 1.0 : slope;
    return gx;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& gy, double slope) {
    return active_backend() == Backend::OpenMP ? leaky_relu_backward_omp(x, gy, slope)
                                               : leaky_relu_backward_serial(x, gy, slope);
}

Tensor sigmoid_forward_serial(const Tensor& x) {
    Tensor y = x;
    for (double& e : y.v) e = 1.0 / (1.0 + std::exp(-e));
    return y;
}

Tensor sigmoid_forward_omp(const Tensor& x) {
    Tensor y = x;
    const long long total = static_cast<long long>(y.size());
#pragma omp parallel for schedule(static)
    for (long long t = 0; t < total; ++t) y.v[t] = 1.0 / (1.0 + std::exp(-y.v[t]));
    return y;
}

Tensor sigmoid_forward(const Tensor& x) {
    return active_backend() == Backend::OpenMP ? sigmoid_forward_omp(x)
                                               : sigmoid_forward_serial(x);
}

Tensor sigmoid_backward_serial(const Tensor& y, const Tensor& gy) {
    Tensor gx = gy;
    for (size_t t = 0; t < gx.size(); ++t) gx.v[t] *= y.v[t] * (1.0 - y.v[t]);
    return gx;
}

Tensor sigmoid_backward_omp(const Tensor& y, const Tensor& gy) {
    Tensor gx = gy;
    const long long total = static_cast<long long>(gx.size());
#pragma omp parallel for schedule(static)
    for (long long t = 0; t < total; ++t) gx.v[t] *= y.v[t] * (1.0 - y.v[t]);
    return gx;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& gy) {
    return active_backend() == Backend::OpenMP ? sigmoid_backward_omp(y, gy)
                                               : sigmoid_backward_serial(y, gy);
}

namespace {
inline double pool_cell(const Tensor& x, int i, int j, int oy, int ox) {
    return 0.25 * (x.at(i, j, 2 * oy, 2 * ox) + x.at(i, j, 2 * oy, 2 * ox + 1) +
                   x.at(i, j, 2 * oy + 1, 2 * ox) + x.at(i, j, 2 * oy + 1, 2 * ox + 1));
}
}  // namespace

Tensor avgpool2_forward_serial(const Tensor& x) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw std::invalid_argument("avgpool2: extents must be even, got " + x.shape_str());
    Tensor y(x.n, x.c, x.h / 2, x.w / 2);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int oy = 0; oy < y.h; ++oy)
                for (int ox = 0; ox < y.w; ++ox) y.at(i, j, oy, ox) = pool_cell(x, i, j, oy, ox);
    return y;
}

Tensor avgpool2_forward_omp(const Tensor& x) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw std::invalid_argument("avgpool2: extents must be even, got " + x.shape_str());
    Tensor y(x.n, x.c, x.h / 2, x.w / 2);
    const int planes = x.n * x.c;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const int i = p / x.c;
        const int j = p % x.c;
        for (int oy = 0; oy < y.h; ++oy)
            for (int ox = 0; ox < y.w; ++ox) y.at(i, j, oy, ox) = pool_cell(x, i, j, oy, ox);
    }
    return y;
}

Tensor avgpool2_forward(const Tensor& x) {
    return active_backend() == Backend::OpenMP ? avgpool2_forward_omp(x)
                                               : avgpool2_forward_serial(x);
}

Tensor avgpool2_backward_serial(const Tensor& gy, int in_h, int in_w) {
    Tensor gx(gy.n, gy.c, in_h, in_w);
    for (int i = 0; i < gy.n; ++i)
        for (int j = 0; j < gy.c; ++j)
            for (int y = 0; y < in_h; ++y)
                for (int x = 0; x < in_w; ++x)
                    gx.at(i, j, y, x) = 0.25 * gy.at(i, j, y / 2, x / 2);
    return gx;
}

Tensor avgpool2_backward_omp(const Tensor& gy, int in_h, int in_w) {
    Tensor gx(gy.n, gy.c, in_h, in_w);
    const int planes = gy.n * gy.c;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const int i = p / gy.c;
        const int j = p % gy.c;
        for (int y = 0; y < in_h; ++y)
            for (int x = 0; x < in_w; ++x) gx.at(i, j, y, x) = 0.25 * gy.at(i, j, y / 2, x / 2);
    }
    return gx;
}

Tensor avgpool2_backward(const Tensor& gy, int in_h, int in_w) {
    return active_backend() == Backend::OpenMP ? avgpool2_backward_omp(gy, in_h, in_w)
                                               : avgpool2_backward_serial(gy, in_h, in_w);
}

Tensor upsample_nn2_forward_serial(const Tensor& x) {
    Tensor y(x.n, x.c, x.h * 2, x.w * 2);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx) y.at(i, j, yy, xx) = x.at(i, j, yy / 2, xx / 2);
    return y;
}

Tensor upsample_nn2_forward_omp(const Tensor& x) {
    Tensor y(x.n, x.c, x.h * 2, x.w * 2);
    const int planes = x.n * x.c;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const int i = p / x.c;
        const int j = p % x.c;
        for (int yy = 0; yy < y.h; ++yy)
            for (int xx = 0; xx < y.w; ++xx) y.at(i, j, yy, xx) = x.at(i, j, yy / 2, xx / 2);
    }
    return y;
}

Tensor upsample_nn2_forward(const Tensor& x) {
    return active_backend() == Backend::OpenMP ? upsample_nn2_forward_omp(x)
                                               : upsample_nn2_forward_serial(x);
}

Tensor upsample_nn2_backward_serial(const Tensor& gy) {
    Tensor gx(gy.n, gy.c, gy.h / 2, gy.w / 2);
    for (int i = 0; i < gx.n; ++i)
        for (int j = 0; j < gx.c; ++j)
            for (int y = 0; y < gx.h; ++y)
                for (int x = 0; x < gx.w; ++x)
                    gx.at(i, j, y, x) = gy.at(i, j, 2 * y, 2 * x) + gy.at(i, j, 2 * y, 2 * x + 1) +
                                        gy.at(i, j, 2 * y + 1, 2 * x) +
                                        gy.at(i, j, 2 * y + 1, 2 * x + 1);
    return gx;
}

Tensor upsample_nn2_backward_omp(const Tensor& gy) {
    Tensor gx(gy.n, gy.c, gy.h / 2, gy.w / 2);
    const int planes = gx.n * gx.c;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const int i = p / gx.c;
        const int j = p % gx.c;
        for (int y = 0; y < gx.h; ++y)
            for (int x = 0; x < gx.w; ++x)
                gx.at(i, j, y, x) = gy.at(i, j, 2 * y, 2 * x) + gy.at(i, j, 2 * y, 2 * x + 1) +
                                    gy.at(i, j, 2 * y + 1, 2 * x) +
                                    gy.at(i, j, 2 * y + 1, 2 * x + 1);
    }
    return gx;
}

Tensor upsample_nn2_backward(const Tensor& gy) {
    return active_backend() == Backend::OpenMP ? upsample_nn2_backward_omp(gy)
                                               : upsample_nn2_backward_serial(gy);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw std::invalid_argument("concat_channels: incompatible shapes " + a.shape_str() +
                                    " vs " + b.shape_str());
    Tensor out(a.n, a.c + b.c, a.h, a.w);
    for (int i = 0; i < a.n; ++i) {
        for (int j = 0; j < a.c; ++j)
            for (int y = 0; y < a.h; ++y)
                for (int x = 0; x < a.w; ++x) out.at(i, j, y, x) = a.at(i, j, y, x);
        for (int j = 0; j < b.c; ++j)
            for (int y = 0; y < b.h; ++y)
                for (int x = 0; x < b.w; ++x) out.at(i, a.c + j, y, x) = b.at(i, j, y, x);
    }
    return out;
}

void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb) {
    ga = Tensor(g.n, ca, g.h, g.w);
    gb = Tensor(g.n, g.c - ca, g.h, g.w);
    for (int i = 0; i < g.n; ++i) {
        for (int j = 0; j < ca; ++j)
            for (int y = 0; y < g.h; ++y)
                for (int x = 0; x < g.w; ++x) ga.at(i, j, y, x) = g.at(i, j, y, x);
        for (int j = ca; j < g.c; ++j)
            for (int y = 0; y < g.h; ++y)
                for (int x = 0; x < g.w; ++x) gb.at(i, j - ca, y, x) = g.at(i, j, y, x);
    }
}

}  // namespace reloc::kernels
