#include "gridcast/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace gridcast::kern {

// ---------------------------------------------------------------------------
// serial reference
// ---------------------------------------------------------------------------
namespace ref {

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const Conv2dDims& d) {
    const std::int64_t pad = d.k / 2;
    std::vector<double> acc(static_cast<std::size_t>(d.co));
    for (std::int64_t bn = 0; bn < d.n; ++bn) {
        for (std::int64_t oy = 0; oy < d.h; ++oy) {
            for (std::int64_t ox = 0; ox < d.w; ++ox) {
                for (std::int64_t c = 0; c < d.co; ++c) acc[c] = b ? b[c] : 0.0;
                for (std::int64_t ky = 0; ky < d.k; ++ky) {
                    const std::int64_t iy = oy + ky - pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (std::int64_t kx = 0; kx < d.k; ++kx) {
                        const std::int64_t ix = ox + kx - pad;
                        if (ix < 0 || ix >= d.w) continue;
                        const double* xp = x + ((bn * d.h + iy) * d.w + ix) * d.ci;
                        const double* wp = w + ((ky * d.k + kx) * d.ci) * d.co;
                        for (std::int64_t c = 0; c < d.ci; ++c) {
                            const double xv = xp[c];
                            const double* wr = wp + c * d.co;
                            for (std::int64_t o = 0; o < d.co; ++o) acc[o] += xv * wr[o];
                        }
                    }
                }
                double* yp = y + ((bn * d.h + oy) * d.w + ox) * d.co;
                for (std::int64_t o = 0; o < d.co; ++o) yp[o] = acc[o];
            }
        }
    }
}

void conv2d_backward_input(const double* gy, const double* w, double* gx, const Conv2dDims& d) {
    const std::int64_t pad = d.k / 2;
    std::vector<double> acc(static_cast<std::size_t>(d.ci));
    for (std::int64_t bn = 0; bn < d.n; ++bn) {
        for (std::int64_t iy = 0; iy < d.h; ++iy) {
            for (std::int64_t ix = 0; ix < d.w; ++ix) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::int64_t ky = 0; ky < d.k; ++ky) {
                    const std::int64_t oy = iy - ky + pad;
                    if (oy < 0 || oy >= d.h) continue;
                    for (std::int64_t kx = 0; kx < d.k; ++kx) {
                        const std::int64_t ox = ix - kx + pad;
                        if (ox < 0 || ox >= d.w) continue;
                        const double* gp = gy + ((bn * d.h + oy) * d.w + ox) * d.co;
                        const double* wp = w + ((ky * d.k + kx) * d.ci) * d.co;
                        for (std::int64_t c = 0; c < d.ci; ++c) {
                            const double* wr = wp + c * d.co;
                            double s = 0.0;
                            for (std::int64_t o = 0; o < d.co; ++o) s += gp[o] * wr[o];
                            acc[c] += s;
                        }
                    }
                }
                double* gxp = gx + ((bn * d.h + iy) * d.w + ix) * d.ci;
                for (std::int64_t c = 0; c < d.ci; ++c) gxp[c] += acc[c];
            }
        }
    }
}

void conv2d_backward_weights(const double* x, const double* gy, double* gw, const Conv2dDims& d) {
    const std::int64_t pad = d.k / 2;
    for (std::int64_t ky = 0; ky < d.k; ++ky) {
        for (std::int64_t kx = 0; kx < d.k; ++kx) {
            for (std::int64_t c = 0; c < d.ci; ++c) {
                double* gwr = gw + (((ky * d.k + kx) * d.ci) + c) * d.co;
                for (std::int64_t bn = 0; bn < d.n; ++bn) {
                    for (std::int64_t oy = 0; oy < d.h; ++oy) {
                        const std::int64_t iy = oy + ky - pad;
                        if (iy < 0 || iy >= d.h) continue;
                        for (std::int64_t ox = 0; ox < d.w; ++ox) {
                            const std::int64_t ix = ox + kx - pad;
                            if (ix < 0 || ix >= d.w) continue;
                            const double xv = x[((bn * d.h + iy) * d.w + ix) * d.ci + c];
                            const double* gp = gy + ((bn * d.h + oy) * d.w + ox) * d.co;
                            for (std::int64_t o = 0; o < d.co; ++o) gwr[o] += xv * gp[o];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d) {
    const std::int64_t rows = d.n * d.h * d.w;
    for (std::int64_t o = 0; o < d.co; ++o) {
        double s = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) s += gy[r * d.co + o];
        gb[o] += s;
    }
}

// Output pixel (2i+ky, 2j+kx) receives exactly one input pixel: pure gather.
void convtr2_forward(const double* x, const double* w, const double* b, double* y, std::int64_t n,
                     std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co) {
    const std::int64_t ho = 2 * h, wo = 2 * w_in;
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t iy = oy / 2, ky = oy % 2;
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                const std::int64_t ix = ox / 2, kx = ox % 2;
                const double* xp = x + ((bn * h + iy) * w_in + ix) * ci;
                const double* wp = w + ((ky * 2 + kx) * ci) * co;
                double* yp = y + ((bn * ho + oy) * wo + ox) * co;
                for (std::int64_t o = 0; o < co; ++o) yp[o] = b ? b[o] : 0.0;
                for (std::int64_t c = 0; c < ci; ++c) {
                    const double xv = xp[c];
                    const double* wr = wp + c * co;
                    for (std::int64_t o = 0; o < co; ++o) yp[o] += xv * wr[o];
                }
            }
        }
    }
}

void convtr2_backward_input(const double* gy, const double* w, double* gx, std::int64_t n,
                            std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co) {
    const std::int64_t ho = 2 * h, wo = 2 * w_in;
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t iy = 0; iy < h; ++iy) {
            for (std::int64_t ix = 0; ix < w_in; ++ix) {
                double* gxp = gx + ((bn * h + iy) * w_in + ix) * ci;
                for (std::int64_t ky = 0; ky < 2; ++ky) {
                    for (std::int64_t kx = 0; kx < 2; ++kx) {
                        const double* gp = gy + ((bn * ho + 2 * iy + ky) * wo + 2 * ix + kx) * co;
                        const double* wp = w + ((ky * 2 + kx) * ci) * co;
                        for (std::int64_t c = 0; c < ci; ++c) {
                            const double* wr = wp + c * co;
                            double s = 0.0;
                            for (std::int64_t o = 0; o < co; ++o) s += gp[o] * wr[o];
                            gxp[c] += s;
                        }
                    }
                }
            }
        }
    }
}

void convtr2_backward_weights(const double* x, const double* gy, double* gw, std::int64_t n,
                              std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co) {
    const std::int64_t ho = 2 * h, wo = 2 * w_in;
    for (std::int64_t ky = 0; ky < 2; ++ky) {
        for (std::int64_t kx = 0; kx < 2; ++kx) {
            for (std::int64_t c = 0; c < ci; ++c) {
                double* gwr = gw + (((ky * 2 + kx) * ci) + c) * co;
                for (std::int64_t bn = 0; bn < n; ++bn) {
                    for (std::int64_t iy = 0; iy < h; ++iy) {
                        for (std::int64_t ix = 0; ix < w_in; ++ix) {
                            const double xv = x[((bn * h + iy) * w_in + ix) * ci + c];
                            const double* gp =
                                gy + ((bn * ho + 2 * iy + ky) * wo + 2 * ix + kx) * co;
                            for (std::int64_t o = 0; o < co; ++o) gwr[o] += xv * gp[o];
                        }
                    }
                }
            }
        }
    }
}

void maxpool2_forward(const double* x, double* y, std::int32_t* argmax, std::int64_t n,
                      std::int64_t h, std::int64_t w, std::int64_t c) {
    const std::int64_t ho = h / 2, wo = w / 2;
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    double best = 0.0;
                    std::int64_t best_idx = -1;
                    for (std::int64_t ky = 0; ky < 2; ++ky) {
                        for (std::int64_t kx = 0; kx < 2; ++kx) {
                            const std::int64_t idx =
                                ((bn * h + 2 * oy + ky) * w + 2 * ox + kx) * c + ch;
                            if (best_idx < 0 || x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    const std::int64_t oidx = ((bn * ho + oy) * wo + ox) * c + ch;
                    y[oidx] = best;
                    argmax[oidx] = static_cast<std::int32_t>(best_idx);
                }
            }
        }
    }
}

void maxpool2_backward(const double* gy, const std::int32_t* argmax, double* gx, std::int64_t n,
                       std::int64_t h, std::int64_t w, std::int64_t c) {
    const std::int64_t ho = h / 2, wo = w / 2;
    const std::int64_t total = n * ho * wo * c;
    (void)w;
    // pooling windows are disjoint, so scattering per output element never races
    for (std::int64_t i = 0; i < total; ++i) gx[argmax[i]] += gy[i];
}

void matmul_forward(const double* x, const double* w, double* y, std::int64_t b, std::int64_t i,
                    std::int64_t o) {
    for (std::int64_t bn = 0; bn < b; ++bn) {
        double* yp = y + bn * o;
        const double* xp = x + bn * i;
        for (std::int64_t k = 0; k < i; ++k) {
            const double xv = xp[k];
            const double* wr = w + k * o;
            for (std::int64_t j = 0; j < o; ++j) yp[j] += xv * wr[j];
        }
    }
}

void matmul_backward_input(const double* gy, const double* w, double* gx, std::int64_t b,
                           std::int64_t i, std::int64_t o) {
    for (std::int64_t bn = 0; bn < b; ++bn) {
        const double* gp = gy + bn * o;
        double* gxp = gx + bn * i;
        for (std::int64_t k = 0; k < i; ++k) {
            const double* wr = w + k * o;
            double s = 0.0;
            for (std::int64_t j = 0; j < o; ++j) s += gp[j] * wr[j];
            gxp[k] += s;
        }
    }
}

void matmul_backward_weights(const double* x, const double* gy, double* gw, std::int64_t b,
                             std::int64_t i, std::int64_t o) {
    for (std::int64_t k = 0; k < i; ++k) {
        double* gwr = gw + k * o;
        for (std::int64_t bn = 0; bn < b; ++bn) {
            const double xv = x[bn * i + k];
            const double* gp = gy + bn * o;
            for (std::int64_t j = 0; j < o; ++j) gwr[j] += xv * gp[j];
        }
    }
}

void channel_sums(const double* x, double* sum, double* sumsq, std::int64_t rows, std::int64_t c) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double s = 0.0, s2 = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double v = x[r * c + ch];
            s += v;
            s2 += v * v;
        }
        sum[ch] = s;
        sumsq[ch] = s2;
    }
}

void channel_dot_sums(const double* gy, const double* xhat, double* sum_gy, double* sum_gy_xhat,
                      std::int64_t rows, std::int64_t c) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double s = 0.0, sx = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double g = gy[r * c + ch];
            s += g;
            sx += g * xhat[r * c + ch];
        }
        sum_gy[ch] = s;
        sum_gy_xhat[ch] = sx;
    }
}

void bilinear_resize(const double* x, double* y, std::int64_t n, std::int64_t h_in,
                     std::int64_t w_in, std::int64_t h_out, std::int64_t w_out, std::int64_t c) {
    const double sy = static_cast<double>(h_in) / static_cast<double>(h_out);
    const double sx = static_cast<double>(w_in) / static_cast<double>(w_out);
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t oy = 0; oy < h_out; ++oy) {
            double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
            if (fy < 0) fy = 0;
            std::int64_t y0 = static_cast<std::int64_t>(fy);
            if (y0 > h_in - 1) y0 = h_in - 1;
            const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, h_in - 1);
            const double wy = fy - static_cast<double>(y0);
            for (std::int64_t ox = 0; ox < w_out; ++ox) {
                double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
                if (fx < 0) fx = 0;
                std::int64_t x0 = static_cast<std::int64_t>(fx);
                if (x0 > w_in - 1) x0 = w_in - 1;
                const std::int64_t x1 = std::min<std::int64_t>(x0 + 1, w_in - 1);
                const double wx = fx - static_cast<double>(x0);
                const double* p00 = x + ((bn * h_in + y0) * w_in + x0) * c;
                const double* p01 = x + ((bn * h_in + y0) * w_in + x1) * c;
                const double* p10 = x + ((bn * h_in + y1) * w_in + x0) * c;
                const double* p11 = x + ((bn * h_in + y1) * w_in + x1) * c;
                double* yp = y + ((bn * h_out + oy) * w_out + ox) * c;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double top = p00[ch] + wx * (p01[ch] - p00[ch]);
                    const double bot = p10[ch] + wx * (p11[ch] - p10[ch]);
                    yp[ch] = top + wy * (bot - top);
                }
            }
        }
    }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// OpenMP versions; loop bodies mirror the reference exactly
// ---------------------------------------------------------------------------

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const Conv2dDims& d) {
    const std::int64_t pad = d.k / 2;
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<std::size_t>(d.co));
#pragma omp for collapse(2)
        for (std::int64_t bn = 0; bn < d.n; ++bn) {
            for (std::int64_t oy = 0; oy < d.h; ++oy) {
                for (std::int64_t ox = 0; ox < d.w; ++ox) {
                    for (std::int64_t c = 0; c < d.co; ++c) acc[c] = b ? b[c] : 0.0;
                    for (std::int64_t ky = 0; ky < d.k; ++ky) {
                        const std::int64_t iy = oy + ky - pad;
                        if (iy < 0 || iy >= d.h) continue;
                        for (std::int64_t kx = 0; kx < d.k; ++kx) {
                            const std::int64_t ix = ox + kx - pad;
                            if (ix < 0 || ix >= d.w) continue;
                            const double* xp = x + ((bn * d.h + iy) * d.w + ix) * d.ci;
                            const double* wp = w + ((ky * d.k + kx) * d.ci) * d.co;
                            for (std::int64_t c = 0; c < d.ci; ++c) {
                                const double xv = xp[c];
                                const double* wr = wp + c * d.co;
                                for (std::int64_t o = 0; o < d.co; ++o) acc[o] += xv * wr[o];
                            }
                        }
                    }
                    double* yp = y + ((bn * d.h + oy) * d.w + ox) * d.co;
                    for (std::int64_t o = 0; o < d.co; ++o) yp[o] = acc[o];
                }
            }
        }
    }
}

void conv2d_backward_input(const double* gy, const double* w, double* gx, const Conv2dDims& d) {
    const std::int64_t pad = d.k / 2;
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<std::size_t>(d.ci));
#pragma omp for collapse(2)
        for (std::int64_t bn = 0; bn < d.n; ++bn) {
            for (std::int64_t iy = 0; iy < d.h; ++iy) {
                for (std::int64_t ix = 0; ix < d.w; ++ix) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (std::int64_t ky = 0; ky < d.k; ++ky) {
                        const std::int64_t oy = iy - ky + pad;
                        if (oy < 0 || oy >= d.h) continue;
                        for (std::int64_t kx = 0; kx < d.k; ++kx) {
                            const std::int64_t ox = ix - kx + pad;
                            if (ox < 0 || ox >= d.w) continue;
                            const double* gp = gy + ((bn * d.h + oy) * d.w + ox) * d.co;
                            const double* wp = w + ((ky * d.k + kx) * d.ci) * d.co;
                            for (std::int64_t c = 0; c < d.ci; ++c) {
                                const double* wr = wp + c * d.co;
                                double s = 0.0;
                                for (std::int64_t o = 0; o < d.co; ++o) s += gp[o] * wr[o];
                                acc[c] += s;
                            }
                        }
                    }
                    double* gxp = gx + ((bn * d.h + iy) * d.w + ix) * d.ci;
                    for (std::int64_t c = 0; c < d.ci; ++c) gxp[c] += acc[c];
                }
            }
        }
    }
}

void conv2d_backward_weights(const double* x, const double* gy, double* gw, const Conv2dDims& d) {
    const std::int64_t pad = d.k / 2;
    const std::int64_t taps = d.k * d.k * d.ci;
#pragma omp parallel for
    for (std::int64_t tap = 0; tap < taps; ++tap) {
        const std::int64_t ky = tap / (d.k * d.ci);
        const std::int64_t kx = (tap / d.ci) % d.k;
        const std::int64_t c = tap % d.ci;
        double* gwr = gw + tap * d.co;
        for (std::int64_t bn = 0; bn < d.n; ++bn) {
            for (std::int64_t oy = 0; oy < d.h; ++oy) {
                const std::int64_t iy = oy + ky - pad;
                if (iy < 0 || iy >= d.h) continue;
                for (std::int64_t ox = 0; ox < d.w; ++ox) {
                    const std::int64_t ix = ox + kx - pad;
                    if (ix < 0 || ix >= d.w) continue;
                    const double xv = x[((bn * d.h + iy) * d.w + ix) * d.ci + c];
                    const double* gp = gy + ((bn * d.h + oy) * d.w + ox) * d.co;
                    for (std::int64_t o = 0; o < d.co; ++o) gwr[o] += xv * gp[o];
                }
            }
        }
    }
}

void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d) {
    const std::int64_t rows = d.n * d.h * d.w;
#pragma omp parallel for
    for (std::int64_t o = 0; o < d.co; ++o) {
        double s = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) s += gy[r * d.co + o];
        gb[o] += s;
    }
}

void convtr2_forward(const double* x, const double* w, const double* b, double* y, std::int64_t n,
                     std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co) {
    const std::int64_t ho = 2 * h, wo = 2 * w_in;
#pragma omp parallel for collapse(2)
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t iy = oy / 2, ky = oy % 2;
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                const std::int64_t ix = ox / 2, kx = ox % 2;
                const double* xp = x + ((bn * h + iy) * w_in + ix) * ci;
                const double* wp = w + ((ky * 2 + kx) * ci) * co;
                double* yp = y + ((bn * ho + oy) * wo + ox) * co;
                for (std::int64_t o = 0; o < co; ++o) yp[o] = b ? b[o] : 0.0;
                for (std::int64_t c = 0; c < ci; ++c) {
                    const double xv = xp[c];
                    const double* wr = wp + c * co;
                    for (std::int64_t o = 0; o < co; ++o) yp[o] += xv * wr[o];
                }
            }
        }
    }
}

void convtr2_backward_input(const double* gy, const double* w, double* gx, std::int64_t n,
                            std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co) {
    const std::int64_t ho = 2 * h, wo = 2 * w_in;
#pragma omp parallel for collapse(2)
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t iy = 0; iy < h; ++iy) {
            for (std::int64_t ix = 0; ix < w_in; ++ix) {
                double* gxp = gx + ((bn * h + iy) * w_in + ix) * ci;
                for (std::int64_t ky = 0; ky < 2; ++ky) {
                    for (std::int64_t kx = 0; kx < 2; ++kx) {
                        const double* gp = gy + ((bn * ho + 2 * iy + ky) * wo + 2 * ix + kx) * co;
                        const double* wp = w + ((ky * 2 + kx) * ci) * co;
                        for (std::int64_t c = 0; c < ci; ++c) {
                            const double* wr = wp + c * co;
                            double s = 0.0;
                            for (std::int64_t o = 0; o < co; ++o) s += gp[o] * wr[o];
                            gxp[c] += s;
                        }
                    }
                }
            }
        }
    }
}

void convtr2_backward_weights(const double* x, const double* gy, double* gw, std::int64_t n,
                              std::int64_t h, std::int64_t w_in, std::int64_t ci, std::int64_t co) {
    const std::int64_t ho = 2 * h, wo = 2 * w_in;
    const std::int64_t taps = 4 * ci;
#pragma omp parallel for
    for (std::int64_t tap = 0; tap < taps; ++tap) {
        const std::int64_t ky = tap / (2 * ci);
        const std::int64_t kx = (tap / ci) % 2;
        const std::int64_t c = tap % ci;
        double* gwr = gw + tap * co;
        for (std::int64_t bn = 0; bn < n; ++bn) {
            for (std::int64_t iy = 0; iy < h; ++iy) {
                for (std::int64_t ix = 0; ix < w_in; ++ix) {
                    const double xv = x[((bn * h + iy) * w_in + ix) * ci + c];
                    const double* gp = gy + ((bn * ho + 2 * iy + ky) * wo + 2 * ix + kx) * co;
                    for (std::int64_t o = 0; o < co; ++o) gwr[o] += xv * gp[o];
                }
            }
        }
    }
}

void maxpool2_forward(const double* x, double* y, std::int32_t* argmax, std::int64_t n,
                      std::int64_t h, std::int64_t w, std::int64_t c) {
    const std::int64_t ho = h / 2, wo = w / 2;
#pragma omp parallel for collapse(2)
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    double best = 0.0;
                    std::int64_t best_idx = -1;
                    for (std::int64_t ky = 0; ky < 2; ++ky) {
                        for (std::int64_t kx = 0; kx < 2; ++kx) {
                            const std::int64_t idx =
                                ((bn * h + 2 * oy + ky) * w + 2 * ox + kx) * c + ch;
                            if (best_idx < 0 || x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    const std::int64_t oidx = ((bn * ho + oy) * wo + ox) * c + ch;
                    y[oidx] = best;
                    argmax[oidx] = static_cast<std::int32_t>(best_idx);
                }
            }
        }
    }
}

void maxpool2_backward(const double* gy, const std::int32_t* argmax, double* gx, std::int64_t n,
                       std::int64_t h, std::int64_t w, std::int64_t c) {
    const std::int64_t ho = h / 2, wo = w / 2;
    const std::int64_t total = n * ho * wo * c;
    (void)w;
#pragma omp parallel for
    for (std::int64_t i = 0; i < total; ++i) gx[argmax[i]] += gy[i];
}

void matmul_forward(const double* x, const double* w, double* y, std::int64_t b, std::int64_t i,
                    std::int64_t o) {
#pragma omp parallel for
    for (std::int64_t bn = 0; bn < b; ++bn) {
        double* yp = y + bn * o;
        const double* xp = x + bn * i;
        for (std::int64_t k = 0; k < i; ++k) {
            const double xv = xp[k];
            const double* wr = w + k * o;
            for (std::int64_t j = 0; j < o; ++j) yp[j] += xv * wr[j];
        }
    }
}

void matmul_backward_input(const double* gy, const double* w, double* gx, std::int64_t b,
                           std::int64_t i, std::int64_t o) {
#pragma omp parallel for
    for (std::int64_t bn = 0; bn < b; ++bn) {
        const double* gp = gy + bn * o;
        double* gxp = gx + bn * i;
        for (std::int64_t k = 0; k < i; ++k) {
            const double* wr = w + k * o;
            double s = 0.0;
            for (std::int64_t j = 0; j < o; ++j) s += gp[j] * wr[j];
            gxp[k] += s;
        }
    }
}

void matmul_backward_weights(const double* x, const double* gy, double* gw, std::int64_t b,
                             std::int64_t i, std::int64_t o) {
#pragma omp parallel for
    for (std::int64_t k = 0; k < i; ++k) {
        double* gwr = gw + k * o;
        for (std::int64_t bn = 0; bn < b; ++bn) {
            const double xv = x[bn * i + k];
            const double* gp = gy + bn * o;
            for (std::int64_t j = 0; j < o; ++j) gwr[j] += xv * gp[j];
        }
    }
}

void channel_sums(const double* x, double* sum, double* sumsq, std::int64_t rows, std::int64_t c) {
#pragma omp parallel for
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double s = 0.0, s2 = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double v = x[r * c + ch];
            s += v;
            s2 += v * v;
        }
        sum[ch] = s;
        sumsq[ch] = s2;
    }
}

void channel_dot_sums(const double* gy, const double* xhat, double* sum_gy, double* sum_gy_xhat,
                      std::int64_t rows, std::int64_t c) {
#pragma omp parallel for
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double s = 0.0, sx = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double g = gy[r * c + ch];
            s += g;
            sx += g * xhat[r * c + ch];
        }
        sum_gy[ch] = s;
        sum_gy_xhat[ch] = sx;
    }
}

void bilinear_resize(const double* x, double* y, std::int64_t n, std::int64_t h_in,
                     std::int64_t w_in, std::int64_t h_out, std::int64_t w_out, std::int64_t c) {
    const double sy = static_cast<double>(h_in) / static_cast<double>(h_out);
    const double sx = static_cast<double>(w_in) / static_cast<double>(w_out);
#pragma omp parallel for collapse(2)
    for (std::int64_t bn = 0; bn < n; ++bn) {
        for (std::int64_t oy = 0; oy < h_out; ++oy) {
            double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
            if (fy < 0) fy = 0;
            std::int64_t y0 = static_cast<std::int64_t>(fy);
            if (y0 > h_in - 1) y0 = h_in - 1;
            const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, h_in - 1);
            const double wy = fy - static_cast<double>(y0);
            for (std::int64_t ox = 0; ox < w_out; ++ox) {
                double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
                if (fx < 0) fx = 0;
                std::int64_t x0 = static_cast<std::int64_t>(fx);
                if (x0 > w_in - 1) x0 = w_in - 1;
                const std::int64_t x1 = std::min<std::int64_t>(x0 + 1, w_in - 1);
                const double wx = fx - static_cast<double>(x0);
                const double* p00 = x + ((bn * h_in + y0) * w_in + x0) * c;
                const double* p01 = x + ((bn * h_in + y0) * w_in + x1) * c;
                const double* p10 = x + ((bn * h_in + y1) * w_in + x0) * c;
                const double* p11 = x + ((bn * h_in + y1) * w_in + x1) * c;
                double* yp = y + ((bn * h_out + oy) * w_out + ox) * c;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double top = p00[ch] + wx * (p01[ch] - p00[ch]);
                    const double bot = p10[ch] + wx * (p11[ch] - p10[ch]);
                    yp[ch] = top + wy * (bot - top);
                }
            }
        }
    }
}

}  // namespace gridcast::kern
