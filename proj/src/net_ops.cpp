#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "sdc/net.hpp"

namespace sdc {

namespace {

int out_extent(int in, int s) { return (in + s - 1) / s; }

// Weight tensors are [A][B][k][k]; the forward core maps B channels to A
// channels, the spread core is its exact adjoint (A channels back to B).
// Parallel regions split over disjoint output slices only, so results are
// bit-identical for any thread count.

void check_conv_shapes(const Tensor4& x, const Tensor4& w, std::size_t bias_size, int stride,
                       const char* what) {
    if (w.h != w.w || w.h % 2 == 0)
        throw ShapeError(fmt::format("{}: kernel must be square with odd size, got {}x{}", what,
                                     w.h, w.w));
    if (stride < 1) throw ShapeError(fmt::format("{}: stride must be >= 1, got {}", what, stride));
    if (x.c != w.c)
        throw ShapeError(fmt::format("{}: input has {} channels, kernel expects {}", what, x.c,
                                     w.c));
    if (bias_size != static_cast<std::size_t>(w.n))
        throw ShapeError(fmt::format("{}: bias has {} entries for {} output channels", what,
                                     bias_size, w.n));
}

/// Fused 3x3 row update: orow[ox] += sum of three 3-tap stencils, one per
/// input row. Callers point absent rows at a zero buffer. Weights are laid
/// out [row][offset] with offsets (-1, 0, +1).
void conv3_rows(double* __restrict__ o, const double* __restrict__ a,
                const double* __restrict__ b, const double* __restrict__ c,
                const double* __restrict__ w, int width) {
    if (width == 1) {
        o[0] += w[1] * a[0] + w[4] * b[0] + w[7] * c[0];
        return;
    }
    o[0] += w[1] * a[0] + w[2] * a[1] + w[4] * b[0] + w[5] * b[1] + w[7] * c[0] + w[8] * c[1];
    for (int ox = 1; ox < width - 1; ++ox)
        o[ox] += w[0] * a[ox - 1] + w[1] * a[ox] + w[2] * a[ox + 1] + w[3] * b[ox - 1] +
                 w[4] * b[ox] + w[5] * b[ox + 1] + w[6] * c[ox - 1] + w[7] * c[ox] +
                 w[8] * c[ox + 1];
    o[width - 1] += w[0] * a[width - 2] + w[1] * a[width - 1] + w[3] * b[width - 2] +
                    w[4] * b[width - 1] + w[6] * c[width - 2] + w[7] * c[width - 1];
}

/// Strided variant of conv3_rows: orow[ox] gathers from input columns
/// ox*s + (-1, 0, +1). Absent rows point at the zero buffer.
void conv3_rows_strided(double* __restrict__ o, const double* __restrict__ a,
                        const double* __restrict__ b, const double* __restrict__ c,
                        const double* __restrict__ w, int out_w, int in_w, int s) {
    const int lo = 1;
    const int hi = std::min(out_w - 1, (in_w - 2) / s);
    // Peeled columns where a tap would leave the row.
    for (int ox = 0; ox < out_w; ++ox) {
        if (ox >= lo && ox <= hi) {
            ox = hi;  // interior handled below
            continue;
        }
        const int ix = ox * s;
        double acc = 0.0;
        if (ix - 1 >= 0) acc += w[0] * a[ix - 1] + w[3] * b[ix - 1] + w[6] * c[ix - 1];
        if (ix < in_w) acc += w[1] * a[ix] + w[4] * b[ix] + w[7] * c[ix];
        if (ix + 1 < in_w) acc += w[2] * a[ix + 1] + w[5] * b[ix + 1] + w[8] * c[ix + 1];
        o[ox] += acc;
    }
#pragma omp simd
    for (int ox = lo; ox <= hi; ++ox) {
        const int ix = ox * s;
        o[ox] += w[0] * a[ix - 1] + w[1] * a[ix] + w[2] * a[ix + 1] + w[3] * b[ix - 1] +
                 w[4] * b[ix] + w[5] * b[ix + 1] + w[6] * c[ix - 1] + w[7] * c[ix] +
                 w[8] * c[ix + 1];
    }
}

Tensor4 conv_forward_core(const Tensor4& x, const Tensor4& w, const double* bias, int s) {
    const int k = w.h, pad = k / 2;
    const int oh = out_extent(x.h, s), ow = out_extent(x.w, s);
    Tensor4 out(x.n, w.n, oh, ow, 0.0);

    if (k == 3 && s >= 2) {
        const std::vector<double> zeros(x.w, 0.0);
#pragma omp parallel for collapse(2) schedule(static)
        for (int n = 0; n < x.n; ++n) {
            for (int a = 0; a < w.n; ++a) {
                const double b = bias ? bias[a] : 0.0;
                for (int oy = 0; oy < oh; ++oy) {
                    double* orow = out.row(n, a, oy);
                    std::fill(orow, orow + ow, b);
                }
                for (int ic = 0; ic < x.c; ++ic) {
                    const double* wk = w.row(a, ic, 0);
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * s;
                        const double* up = iy > 0 ? x.row(n, ic, iy - 1) : zeros.data();
                        const double* mid = iy < x.h ? x.row(n, ic, iy) : zeros.data();
                        const double* dn = iy + 1 < x.h ? x.row(n, ic, iy + 1) : zeros.data();
                        conv3_rows_strided(out.row(n, a, oy), up, mid, dn, wk, ow, x.w, s);
                    }
                }
            }
        }
        return out;
    }

    if (k == 3 && s == 1) {
        const std::vector<double> zeros(x.w, 0.0);
#pragma omp parallel for collapse(2) schedule(static)
        for (int n = 0; n < x.n; ++n) {
            for (int a = 0; a < w.n; ++a) {
                const double b = bias ? bias[a] : 0.0;
                for (int oy = 0; oy < oh; ++oy) {
                    double* orow = out.row(n, a, oy);
                    std::fill(orow, orow + ow, b);
                }
                for (int ic = 0; ic < x.c; ++ic) {
                    const double* wk = w.row(a, ic, 0);
                    for (int oy = 0; oy < oh; ++oy) {
                        const double* up = oy > 0 ? x.row(n, ic, oy - 1) : zeros.data();
                        const double* mid = x.row(n, ic, oy);
                        const double* dn = oy < x.h - 1 ? x.row(n, ic, oy + 1) : zeros.data();
                        conv3_rows(out.row(n, a, oy), up, mid, dn, wk, x.w);
                    }
                }
            }
        }
        return out;
    }

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < x.n; ++n) {
        for (int a = 0; a < w.n; ++a) {
            const double b = bias ? bias[a] : 0.0;
            for (int oy = 0; oy < oh; ++oy) {
                double* orow = out.row(n, a, oy);
                std::fill(orow, orow + ow, b);
            }
            for (int ic = 0; ic < x.c; ++ic) {
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = w.at(a, ic, ky, kx);
                        const int dx = kx - pad;
                        const int ox_lo = pad - kx > 0 ? (pad - kx + s - 1) / s : 0;
                        const int hi_num = x.w - 1 + pad - kx;
                        const int ox_hi = hi_num < 0 ? -1 : std::min(ow - 1, hi_num / s);
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * s + ky - pad;
                            if (iy < 0 || iy >= x.h) continue;
                            const double* __restrict__ xrow = x.row(n, ic, iy);
                            double* __restrict__ orow = out.row(n, a, oy);
                            if (s == 1) {
                                const double* __restrict__ xs = xrow + dx;
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    orow[ox] += wv * xs[ox];
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    orow[ox] += wv * xrow[ox * s + dx];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor4 conv_spread_core(const Tensor4& u, const Tensor4& w, int s, int out_h, int out_w) {
    const int k = w.h, pad = k / 2;
    Tensor4 out(u.n, w.c, out_h, out_w, 0.0);

    if (k == 3 && s == 2 && out_h == 2 * u.h && out_w == 2 * u.w) {
        // Stride-2 adjoint, split by output row/column parity: even rows
        // gather from the center tap row, odd rows from the two outer tap
        // rows, and analogously for columns within each row pass.
#pragma omp parallel for collapse(2) schedule(static)
        for (int n = 0; n < u.n; ++n) {
            for (int b = 0; b < w.c; ++b) {
                for (int a = 0; a < u.c; ++a) {
                    const double* wk = w.row(a, b, 0);
                    for (int iy = 0; iy < out_h; ++iy) {
                        const double* rows[2];
                        const double* wrow[2];
                        int nrows = 0;
                        if (iy % 2 == 0) {  // ky = 1
                            rows[nrows] = u.row(n, a, iy / 2);
                            wrow[nrows++] = wk + 3;
                        } else {
                            if ((iy + 1) / 2 < u.h) {  // ky = 0
                                rows[nrows] = u.row(n, a, (iy + 1) / 2);
                                wrow[nrows++] = wk;
                            }
                            rows[nrows] = u.row(n, a, (iy - 1) / 2);  // ky = 2
                            wrow[nrows++] = wk + 6;
                        }
                        double* __restrict__ orow = out.row(n, b, iy);
                        for (int t = 0; t < nrows; ++t) {
                            const double* __restrict__ ur = rows[t];
                            const double wl = wrow[t][0], wc2 = wrow[t][1], wr = wrow[t][2];
#pragma omp simd
                            for (int q = 0; q < u.w - 1; ++q) {
                                orow[2 * q] += wc2 * ur[q];
                                orow[2 * q + 1] += wr * ur[q] + wl * ur[q + 1];
                            }
                            orow[2 * u.w - 2] += wc2 * ur[u.w - 1];
                            orow[2 * u.w - 1] += wr * ur[u.w - 1];
                        }
                    }
                }
            }
        }
        return out;
    }

    if (k == 3 && s == 1 && out_h == u.h && out_w == u.w) {
        // Gather form of the adjoint: correlate with the kernel flipped in
        // both spatial directions.
        const std::vector<double> zeros(u.w, 0.0);
#pragma omp parallel for collapse(2) schedule(static)
        for (int n = 0; n < u.n; ++n) {
            for (int b = 0; b < w.c; ++b) {
                for (int a = 0; a < u.c; ++a) {
                    const double* wk = w.row(a, b, 0);
                    const double flipped[9] = {wk[8], wk[7], wk[6], wk[5], wk[4],
                                               wk[3], wk[2], wk[1], wk[0]};
                    for (int iy = 0; iy < out_h; ++iy) {
                        const double* up = iy > 0 ? u.row(n, a, iy - 1) : zeros.data();
                        const double* mid = u.row(n, a, iy);
                        const double* dn = iy < u.h - 1 ? u.row(n, a, iy + 1) : zeros.data();
                        conv3_rows(out.row(n, b, iy), up, mid, dn, flipped, u.w);
                    }
                }
            }
        }
        return out;
    }

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < u.n; ++n) {
        for (int b = 0; b < w.c; ++b) {
            for (int a = 0; a < u.c; ++a) {
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = w.at(a, b, ky, kx);
                        const int dx = kx - pad;
                        const int ox_lo = pad - kx > 0 ? (pad - kx + s - 1) / s : 0;
                        const int hi_num = out_w - 1 + pad - kx;
                        const int ox_hi = hi_num < 0 ? -1 : std::min(u.w - 1, hi_num / s);
                        for (int oy = 0; oy < u.h; ++oy) {
                            const int iy = oy * s + ky - pad;
                            if (iy < 0 || iy >= out_h) continue;
                            const double* __restrict__ urow = u.row(n, a, oy);
                            double* __restrict__ orow = out.row(n, b, iy);
                            if (s == 1) {
                                double* __restrict__ os = orow + dx;
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    os[ox] += wv * urow[ox];
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    orow[ox * s + dx] += wv * urow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor4 conv_wgrad_core(const Tensor4& u, const Tensor4& x, int k, int s) {
    const int pad = k / 2;
    Tensor4 gw(u.c, x.c, k, k, 0.0);

    if (k == 3 && u.h == out_extent(x.h, s) && u.w == out_extent(x.w, s)) {
        // Fused taps with simd reduction clauses; evaluation order is fixed
        // per build, so results stay reproducible run to run.
        const int full_lo = 1;
        const int full_hi = std::min(u.w - 1, (x.w - 2) / s);
#pragma omp parallel for collapse(2) schedule(static)
        for (int a = 0; a < u.c; ++a) {
            for (int b = 0; b < x.c; ++b) {
                for (int ky = 0; ky < 3; ++ky) {
                    double l = 0, m = 0, r = 0;
                    const int oy_lo = ky == 0 ? 1 : 0;
                    const int oy_hi = std::min(u.h - 1, (x.h - ky) / s);
                    for (int n = 0; n < u.n; ++n) {
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const double* __restrict__ urow = u.row(n, a, oy);
                            const double* __restrict__ xrow = x.row(n, b, oy * s + ky - 1);
                            // Columns where some tap leaves the row.
                            for (int ox = 0; ox < u.w; ++ox) {
                                if (ox >= full_lo && ox <= full_hi) {
                                    ox = full_hi;
                                    continue;
                                }
                                const int ix = ox * s;
                                const double uv = urow[ox];
                                if (ix - 1 >= 0) l += uv * xrow[ix - 1];
                                if (ix < x.w) m += uv * xrow[ix];
                                if (ix + 1 < x.w) r += uv * xrow[ix + 1];
                            }
#pragma omp simd reduction(+ : l, m, r)
                            for (int ox = full_lo; ox <= full_hi; ++ox) {
                                const double uv = urow[ox];
                                l += uv * xrow[ox * s - 1];
                                m += uv * xrow[ox * s];
                                r += uv * xrow[ox * s + 1];
                            }
                        }
                    }
                    gw.at(a, b, ky, 0) = l;
                    gw.at(a, b, ky, 1) = m;
                    gw.at(a, b, ky, 2) = r;
                }
            }
        }
        return gw;
    }

#pragma omp parallel for collapse(2) schedule(static)
    for (int a = 0; a < u.c; ++a) {
        for (int b = 0; b < x.c; ++b) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - pad;
                    const int ox_lo = pad - kx > 0 ? (pad - kx + s - 1) / s : 0;
                    const int hi_num = x.w - 1 + pad - kx;
                    const int ox_hi = hi_num < 0 ? -1 : std::min(u.w - 1, hi_num / s);
                    double acc = 0.0;
                    for (int n = 0; n < u.n; ++n) {
                        for (int oy = 0; oy < u.h; ++oy) {
                            const int iy = oy * s + ky - pad;
                            if (iy < 0 || iy >= x.h) continue;
                            const double* __restrict__ urow = u.row(n, a, oy);
                            const double* __restrict__ xrow = x.row(n, b, iy);
                            if (s == 1) {
                                const double* __restrict__ xs = xrow + dx;
#pragma omp simd reduction(+ : acc)
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    acc += urow[ox] * xs[ox];
                            } else {
#pragma omp simd reduction(+ : acc)
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    acc += urow[ox] * xrow[ox * s + dx];
                            }
                        }
                    }
                    gw.at(a, b, ky, kx) = acc;
                }
            }
        }
    }
    return gw;
}

std::vector<double> channel_sums(const Tensor4& u) {
    std::vector<double> sums(u.c, 0.0);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < u.c; ++c) {
        double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
        for (int n = 0; n < u.n; ++n)
            for (int y = 0; y < u.h; ++y) {
                const double* row = u.row(n, c, y);
                int x = 0;
                for (; x + 3 < u.w; x += 4) {
                    acc0 += row[x];
                    acc1 += row[x + 1];
                    acc2 += row[x + 2];
                    acc3 += row[x + 3];
                }
                for (; x < u.w; ++x) acc0 += row[x];
            }
        sums[c] = (acc0 + acc1) + (acc2 + acc3);
    }
    return sums;
}

void check_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(fmt::format("{}: shape ({},{},{},{}) vs ({},{},{},{})", what, a.n, a.c,
                                     a.h, a.w, b.n, b.c, b.h, b.w));
}

}  // namespace

Tensor4 dense_conv2d(const Tensor4& x, const Tensor4& weights, std::span<const double> bias,
                     int stride) {
    check_conv_shapes(x, weights, bias.size(), stride, "dense_conv2d");
    return conv_forward_core(x, weights, bias.data(), stride);
}

ConvGrads dense_conv2d_backward(const Tensor4& x, const Tensor4& weights, int stride,
                                const Tensor4& upstream) {
    check_conv_shapes(x, weights, static_cast<std::size_t>(weights.n), stride,
                      "dense_conv2d_backward");
    const Tensor4 expected(x.n, weights.n, out_extent(x.h, stride), out_extent(x.w, stride));
    check_same_shape(upstream, expected, "dense_conv2d_backward upstream");
    ConvGrads g;
    g.input = conv_spread_core(upstream, weights, stride, x.h, x.w);
    g.weights = conv_wgrad_core(upstream, x, weights.h, stride);
    g.bias = channel_sums(upstream);
    return g;
}

Tensor4 transposed_conv2d(const Tensor4& x, const Tensor4& weights, std::span<const double> bias,
                          int stride) {
    if (weights.h != weights.w || weights.h % 2 == 0)
        throw ShapeError(fmt::format("transposed_conv2d: kernel must be square with odd size, "
                                     "got {}x{}",
                                     weights.h, weights.w));
    if (stride < 1) throw ShapeError("transposed_conv2d: stride must be >= 1");
    if (x.c != weights.n)
        throw ShapeError(fmt::format("transposed_conv2d: input has {} channels, kernel expects {}",
                                     x.c, weights.n));
    if (bias.size() != static_cast<std::size_t>(weights.c))
        throw ShapeError(fmt::format("transposed_conv2d: bias has {} entries for {} output "
                                     "channels",
                                     bias.size(), weights.c));
    Tensor4 out = conv_spread_core(x, weights, stride, x.h * stride, x.w * stride);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < out.n; ++n)
        for (int c = 0; c < out.c; ++c) {
            const double b = bias[c];
            for (int y = 0; y < out.h; ++y) {
                double* row = out.row(n, c, y);
                for (int xx = 0; xx < out.w; ++xx) row[xx] += b;
            }
        }
    return out;
}

ConvGrads transposed_conv2d_backward(const Tensor4& x, const Tensor4& weights, int stride,
                                     const Tensor4& upstream) {
    const Tensor4 expected(x.n, weights.c, x.h * stride, x.w * stride);
    check_same_shape(upstream, expected, "transposed_conv2d_backward upstream");
    ConvGrads g;
    g.input = conv_forward_core(upstream, weights, nullptr, stride);
    // Same inner product as the dense weight gradient with the roles of
    // upstream and input swapped; lands in [in][out][k][k] layout directly.
    g.weights = conv_wgrad_core(x, upstream, weights.h, stride);
    g.bias = channel_sums(upstream);
    return g;
}

Tensor4 batchnorm(const Tensor4& x, std::span<const double> gamma, std::span<const double> beta,
                  BatchNormRunning& running, bool train, BatchNormCache* cache) {
    if (gamma.size() != static_cast<std::size_t>(x.c) || beta.size() != gamma.size() ||
        running.mean.size() != gamma.size() || running.var.size() != gamma.size())
        throw ShapeError(fmt::format("batchnorm: parameter length mismatch for {} channels", x.c));

    const double m = static_cast<double>(x.n) * x.h * x.w;
    Tensor4 out(x.n, x.c, x.h, x.w, 0.0);
    std::vector<double> mean(x.c), inv_std(x.c);

    for (int c = 0; c < x.c; ++c) {
        double mu, var;
        if (train) {
            double sum = 0.0;
            for (int n = 0; n < x.n; ++n)
                for (int y = 0; y < x.h; ++y) {
                    const double* row = x.row(n, c, y);
                    for (int xx = 0; xx < x.w; ++xx) sum += row[xx];
                }
            mu = sum / m;
            double sq = 0.0;
            for (int n = 0; n < x.n; ++n)
                for (int y = 0; y < x.h; ++y) {
                    const double* row = x.row(n, c, y);
                    for (int xx = 0; xx < x.w; ++xx) sq += (row[xx] - mu) * (row[xx] - mu);
                }
            var = sq / m;
            running.mean[c] = (1.0 - kBatchNormMomentum) * running.mean[c] + kBatchNormMomentum * mu;
            running.var[c] = (1.0 - kBatchNormMomentum) * running.var[c] + kBatchNormMomentum * var;
        } else {
            mu = running.mean[c];
            var = running.var[c];
        }
        mean[c] = mu;
        inv_std[c] = 1.0 / std::sqrt(var + kBatchNormEps);
        const double scale = gamma[c] * inv_std[c];
        const double shift = beta[c] - scale * mu;
        for (int n = 0; n < x.n; ++n)
            for (int y = 0; y < x.h; ++y) {
                const double* row = x.row(n, c, y);
                double* orow = out.row(n, c, y);
                for (int xx = 0; xx < x.w; ++xx) orow[xx] = scale * row[xx] + shift;
            }
    }
    if (cache) {
        cache->mean = std::move(mean);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

BatchNormGrads batchnorm_backward(const Tensor4& x, std::span<const double> gamma,
                                  const BatchNormCache& cache, const Tensor4& upstream) {
    check_same_shape(x, upstream, "batchnorm_backward");
    if (cache.mean.size() != static_cast<std::size_t>(x.c))
        throw StateError("batchnorm_backward: missing train-mode cache");

    const double m = static_cast<double>(x.n) * x.h * x.w;
    BatchNormGrads g;
    g.input = Tensor4(x.n, x.c, x.h, x.w, 0.0);
    g.gamma.assign(x.c, 0.0);
    g.beta.assign(x.c, 0.0);

    for (int c = 0; c < x.c; ++c) {
        const double mu = cache.mean[c], istd = cache.inv_std[c];
        double sum_up = 0.0, sum_up_xhat = 0.0;
        for (int n = 0; n < x.n; ++n)
            for (int y = 0; y < x.h; ++y) {
                const double* urow = upstream.row(n, c, y);
                const double* xrow = x.row(n, c, y);
                for (int xx = 0; xx < x.w; ++xx) {
                    sum_up += urow[xx];
                    sum_up_xhat += urow[xx] * (xrow[xx] - mu) * istd;
                }
            }
        g.beta[c] = sum_up;
        g.gamma[c] = sum_up_xhat;
        const double k = gamma[c] * istd / m;
        for (int n = 0; n < x.n; ++n)
            for (int y = 0; y < x.h; ++y) {
                const double* urow = upstream.row(n, c, y);
                const double* xrow = x.row(n, c, y);
                double* grow = g.input.row(n, c, y);
                for (int xx = 0; xx < x.w; ++xx) {
                    const double xhat = (xrow[xx] - mu) * istd;
                    grow[xx] = k * (m * urow[xx] - sum_up - xhat * sum_up_xhat);
                }
            }
    }
    return g;
}

Tensor4 maxpool2d(const Tensor4& x, int k, int stride, std::vector<int>* argmax) {
    if (k < 1 || stride < 1) throw ShapeError("maxpool2d: window and stride must be >= 1");
    const int pad = k / 2;
    const int oh = out_extent(x.h, stride), ow = out_extent(x.w, stride);
    Tensor4 out(x.n, x.c, oh, ow, 0.0);
    if (argmax) argmax->assign(out.numel(), -1);

    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double best = 0.0;
                    int best_idx = -1;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= x.w) continue;
                            const double v = x.at(n, c, iy, ix);
                            if (best_idx < 0 || v > best) {
                                best = v;
                                best_idx = iy * x.w + ix;
                            }
                        }
                    }
                    out.at(n, c, oy, ox) = best_idx >= 0 ? best : 0.0;
                    if (argmax)
                        (*argmax)[((static_cast<std::size_t>(n) * x.c + c) * oh + oy) * ow + ox] =
                            best_idx;
                }
    return out;
}

Tensor4 maxpool2d_backward(const Tensor4& x, [[maybe_unused]] int k, int stride,
                           std::span<const int> argmax, const Tensor4& upstream) {
    const int oh = out_extent(x.h, stride), ow = out_extent(x.w, stride);
    const Tensor4 expected(x.n, x.c, oh, ow);
    check_same_shape(upstream, expected, "maxpool2d_backward upstream");
    if (argmax.size() != upstream.numel())
        throw StateError("maxpool2d_backward: argmax cache does not match upstream");

    Tensor4 g(x.n, x.c, x.h, x.w, 0.0);
    std::size_t i = 0;
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++i) {
                    const int idx = argmax[i];
                    if (idx < 0) continue;
                    g.at(n, c, idx / x.w, idx % x.w) += upstream.at(n, c, oy, ox);
                }
    return g;
}

Tensor4 relu(const Tensor4& x) {
    Tensor4 out = x;
    for (double& v : out.v) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor4 relu_backward(const Tensor4& x, const Tensor4& upstream) {
    check_same_shape(x, upstream, "relu_backward");
    Tensor4 g = upstream;
    for (std::size_t i = 0; i < g.v.size(); ++i)
        if (x.v[i] <= 0.0) g.v[i] = 0.0;
    return g;
}

Tensor4 softmax_channels(const Tensor4& logits) {
    Tensor4 out(logits.n, logits.c, logits.h, logits.w, 0.0);
    for (int n = 0; n < logits.n; ++n)
        for (int y = 0; y < logits.h; ++y)
            for (int x = 0; x < logits.w; ++x) {
                double mx = logits.at(n, 0, y, x);
                for (int c = 1; c < logits.c; ++c) mx = std::max(mx, logits.at(n, c, y, x));
                double z = 0.0;
                for (int c = 0; c < logits.c; ++c) {
                    const double e = std::exp(logits.at(n, c, y, x) - mx);
                    out.at(n, c, y, x) = e;
                    z += e;
                }
                for (int c = 0; c < logits.c; ++c) out.at(n, c, y, x) /= z;
            }
    return out;
}

Tensor4 softmax_channels_backward(const Tensor4& probs, const Tensor4& upstream) {
    check_same_shape(probs, upstream, "softmax_channels_backward");
    Tensor4 g(probs.n, probs.c, probs.h, probs.w, 0.0);
    for (int n = 0; n < probs.n; ++n)
        for (int y = 0; y < probs.h; ++y)
            for (int x = 0; x < probs.w; ++x) {
                double dot = 0.0;
                for (int c = 0; c < probs.c; ++c)
                    dot += probs.at(n, c, y, x) * upstream.at(n, c, y, x);
                for (int c = 0; c < probs.c; ++c)
                    g.at(n, c, y, x) = probs.at(n, c, y, x) * (upstream.at(n, c, y, x) - dot);
            }
    return g;
}

}  // namespace sdc
