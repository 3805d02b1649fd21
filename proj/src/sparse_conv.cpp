#include "sdc/sparse_conv.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "sdc/rng.hpp"

namespace sdc {

namespace {

void check_masked(const MaskGrid& mask) {
    for (std::uint8_t m : mask)
        if (m > 1) throw DomainError(fmt::format("mask entries must be 0 or 1, got {}", int(m)));
}

int out_extent(int in, int s) { return (in + s - 1) / s; }

}  // namespace

MaskedTensor::MaskedTensor(int channels_, std::vector<double> features_, MaskGrid mask_) {
    channels = channels_;
    height = mask_.height();
    width = mask_.width();
    if (features_.size() != static_cast<std::size_t>(channels) * height * width)
        throw ShapeError(fmt::format("MaskedTensor: {} features for {}x{}x{}", features_.size(),
                                     channels, height, width));
    check_masked(mask_);
    features = std::move(features_);
    mask = std::move(mask_);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            if (!valid(r, c))
                for (int ch = 0; ch < channels; ++ch)
                    if (at(ch, r, c) != 0.0)
                        throw DomainError(fmt::format(
                            "MaskedTensor not canonical: feature {} at masked-out pixel ({}, {})",
                            at(ch, r, c), r, c));
}

MaskedTensor MaskedTensor::canonicalize(int channels, std::vector<double> features,
                                        MaskGrid mask) {
    check_masked(mask);
    const int h = mask.height(), w = mask.width();
    if (features.size() != static_cast<std::size_t>(channels) * h * w)
        throw ShapeError(fmt::format("MaskedTensor: {} features for {}x{}x{}", features.size(),
                                     channels, h, w));
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (mask.at(r, c) == 0)
                for (int ch = 0; ch < channels; ++ch)
                    features[(static_cast<std::size_t>(ch) * h + r) * w + c] = 0.0;
    MaskedTensor out;
    out.channels = channels;
    out.height = h;
    out.width = w;
    out.features = std::move(features);
    out.mask = std::move(mask);
    return out;
}

SparseConvKernel::SparseConvKernel(int out_channels_, int in_channels_, int k_, int s_)
    : out_channels(out_channels_), in_channels(in_channels_), k(k_), s(s_),
      weights(static_cast<std::size_t>(out_channels_) * in_channels_ * k_ * k_, 0.0),
      bias(out_channels_, 0.0) {
    validate();
}

void SparseConvKernel::validate() const {
    if (k < 1 || k % 2 == 0)
        throw ShapeError(fmt::format("kernel size must be odd and >= 1, got {}", k));
    if (s < 1) throw ShapeError(fmt::format("stride must be >= 1, got {}", s));
    if (out_channels < 1 || in_channels < 1)
        throw ShapeError("kernel channel counts must be >= 1");
    for (double v : weights)
        if (!std::isfinite(v)) throw RangeError("kernel weights must be finite");
}

MaskedTensor sparse_conv2d(const MaskedTensor& x, const SparseConvKernel& kern) {
    kern.validate();
    if (x.channels != kern.in_channels)
        throw ShapeError(fmt::format("sparse_conv2d: input has {} channels, kernel expects {}",
                                     x.channels, kern.in_channels));

    const int pad = kern.k / 2;
    const int oh = out_extent(x.height, kern.s);
    const int ow = out_extent(x.width, kern.s);

    MaskedTensor out;
    out.channels = kern.out_channels;
    out.height = oh;
    out.width = ow;
    out.features.assign(static_cast<std::size_t>(kern.out_channels) * oh * ow, 0.0);
    out.mask = MaskGrid(oh, ow, 0);

    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            int count = 0;
            for (int ky = 0; ky < kern.k; ++ky) {
                const int iy = oy * kern.s + ky - pad;
                if (iy < 0 || iy >= x.height) continue;
                for (int kx = 0; kx < kern.k; ++kx) {
                    const int ix = ox * kern.s + kx - pad;
                    if (ix < 0 || ix >= x.width) continue;
                    count += x.mask.at(iy, ix);
                }
            }
            if (count == 0) continue;  // empty support: feature 0, mask 0
            out.mask.at(oy, ox) = 1;
            for (int oc = 0; oc < kern.out_channels; ++oc) {
                double acc = 0.0;
                for (int ic = 0; ic < kern.in_channels; ++ic) {
                    for (int ky = 0; ky < kern.k; ++ky) {
                        const int iy = oy * kern.s + ky - pad;
                        if (iy < 0 || iy >= x.height) continue;
                        for (int kx = 0; kx < kern.k; ++kx) {
                            const int ix = ox * kern.s + kx - pad;
                            if (ix < 0 || ix >= x.width) continue;
                            if (!x.valid(iy, ix)) continue;
                            acc += kern.w(oc, ic, ky, kx) * x.at(ic, iy, ix);
                        }
                    }
                }
                out.at(oc, oy, ox) = acc / count + kern.bias[oc];
            }
        }
    }
    return out;
}

SparseConvGrads sparse_conv2d_backward(const MaskedTensor& x, const SparseConvKernel& kern,
                                       std::span<const double> upstream) {
    kern.validate();
    if (x.channels != kern.in_channels)
        throw ShapeError(fmt::format("sparse_conv2d_backward: input has {} channels, kernel "
                                     "expects {}",
                                     x.channels, kern.in_channels));
    const int pad = kern.k / 2;
    const int oh = out_extent(x.height, kern.s);
    const int ow = out_extent(x.width, kern.s);
    if (upstream.size() != static_cast<std::size_t>(kern.out_channels) * oh * ow)
        throw ShapeError(fmt::format("sparse_conv2d_backward: upstream has {} values, expected {}",
                                     upstream.size(),
                                     static_cast<std::size_t>(kern.out_channels) * oh * ow));

    SparseConvGrads g;
    g.input.assign(x.features.size(), 0.0);
    g.weights.assign(kern.weights.size(), 0.0);
    g.bias.assign(kern.bias.size(), 0.0);

    auto up = [&](int oc, int oy, int ox) {
        return upstream[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
    };

    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            int count = 0;
            for (int ky = 0; ky < kern.k; ++ky) {
                const int iy = oy * kern.s + ky - pad;
                if (iy < 0 || iy >= x.height) continue;
                for (int kx = 0; kx < kern.k; ++kx) {
                    const int ix = ox * kern.s + kx - pad;
                    if (ix < 0 || ix >= x.width) continue;
                    count += x.mask.at(iy, ix);
                }
            }
            if (count == 0) continue;  // forward emitted the constant 0 here
            const double inv_count = 1.0 / count;
            for (int oc = 0; oc < kern.out_channels; ++oc) {
                const double u = up(oc, oy, ox);
                g.bias[oc] += u;
                if (u == 0.0) continue;
                const double scaled = u * inv_count;
                for (int ic = 0; ic < kern.in_channels; ++ic) {
                    for (int ky = 0; ky < kern.k; ++ky) {
                        const int iy = oy * kern.s + ky - pad;
                        if (iy < 0 || iy >= x.height) continue;
                        for (int kx = 0; kx < kern.k; ++kx) {
                            const int ix = ox * kern.s + kx - pad;
                            if (ix < 0 || ix >= x.width) continue;
                            if (!x.valid(iy, ix)) continue;
                            g.weights[((static_cast<std::size_t>(oc) * kern.in_channels + ic) *
                                           kern.k +
                                       ky) *
                                          kern.k +
                                      kx] += scaled * x.at(ic, iy, ix);
                            g.input[(static_cast<std::size_t>(ic) * x.height + iy) * x.width +
                                    ix] += scaled * kern.w(oc, ic, ky, kx);
                        }
                    }
                }
            }
        }
    }
    return g;
}

Grid<double> propagate_mask(const MaskGrid& mask, int k, int s, MaskPool mode) {
    if (k < 1 || s < 1)
        throw ShapeError(fmt::format("propagate_mask: invalid window k={} s={}", k, s));
    check_masked(mask);
    const int pad = k / 2;
    const int oh = out_extent(mask.height(), s);
    const int ow = out_extent(mask.width(), s);
    Grid<double> out(oh, ow, 0.0);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            int valid = 0;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * s + ky - pad;
                if (iy < 0 || iy >= mask.height()) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * s + kx - pad;
                    if (ix < 0 || ix >= mask.width()) continue;
                    valid += mask.at(iy, ix);
                }
            }
            out.at(oy, ox) = mode == MaskPool::Max ? (valid > 0 ? 1.0 : 0.0)
                                                   : static_cast<double>(valid) / (k * k);
        }
    }
    return out;
}

double saturation(const Grid<double>& mask) {
    if (mask.empty()) return 0.0;
    double sum = 0.0;
    for (double m : mask) {
        if (m != 0.0 && m != 1.0)
            throw DomainError(fmt::format("saturation expects a binary (Max-mode) mask, got {}", m));
        sum += m;
    }
    return sum / static_cast<double>(mask.size());
}

double saturation(const MaskGrid& mask) {
    if (mask.empty()) return 0.0;
    check_masked(mask);
    double sum = 0.0;
    for (std::uint8_t m : mask) sum += m;
    return sum / static_cast<double>(mask.size());
}

std::vector<SaturationStats> saturation_profile(double density,
                                                std::span<const LayerShape> layers, int trials,
                                                int height, int width, std::uint64_t seed) {
    if (!(density > 0.0 && density <= 1.0))
        throw ConfigError(fmt::format("density must lie in (0, 1], got {}", density));
    if (trials < 1) throw ConfigError("trials must be >= 1");

    const int n_layers = static_cast<int>(layers.size());

    // Interior pixels per layer: those whose accumulated windows never
    // clipped at a border, so the closed-form Bernoulli saturation applies
    // to the measured region. Tracked as clean [lo, hi] intervals.
    struct Interval {
        int lo, hi;
    };
    std::vector<Interval> rows(n_layers), cols(n_layers);
    {
        Interval row{0, height - 1}, col{0, width - 1};
        for (int li = 0; li < n_layers; ++li) {
            const auto [k, s] = layers[li];
            const int pad = k / 2;
            row = {(row.lo + pad + s - 1) / s, (row.hi - pad) / s};
            col = {(col.lo + pad + s - 1) / s, (col.hi - pad) / s};
            rows[li] = row;
            cols[li] = col;
        }
    }

    // Per-trial saturation over interior pixels of each layer.
    std::vector<std::vector<double>> per_layer(n_layers);
    for (int t = 0; t < trials; ++t) {
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(t)));
        MaskGrid mask(height, width, 0);
        for (auto& m : mask) m = rng.uniform01() < density ? 1 : 0;

        for (int li = 0; li < n_layers; ++li) {
            const auto [k, s] = layers[li];
            Grid<double> prop = propagate_mask(mask, k, s, MaskPool::Max);
            MaskGrid next(prop.height(), prop.width(), 0);
            for (int r = 0; r < prop.height(); ++r)
                for (int c = 0; c < prop.width(); ++c)
                    next.at(r, c) = prop.at(r, c) > 0.0 ? 1 : 0;

            double sum = 0.0;
            long cells = 0;
            for (int r = rows[li].lo; r <= rows[li].hi; ++r)
                for (int c = cols[li].lo; c <= cols[li].hi; ++c) {
                    sum += next.at(r, c);
                    ++cells;
                }
            per_layer[li].push_back(cells > 0 ? sum / cells : 0.0);
            mask = std::move(next);
        }
    }

    std::vector<SaturationStats> out(n_layers);
    for (int li = 0; li < n_layers; ++li) {
        double mean = 0.0;
        for (double v : per_layer[li]) mean += v;
        mean /= trials;
        double var = 0.0;
        for (double v : per_layer[li]) var += (v - mean) * (v - mean);
        out[li] = {li + 1, mean, trials > 1 ? std::sqrt(var / (trials - 1)) : 0.0};
    }
    return out;
}

std::string saturation_profile_csv(double density, std::span<const SaturationStats> stats) {
    std::string csv = "density,layer_index,mean,stddev\n";
    for (const auto& s : stats)
        csv += fmt::format("{:.9g},{},{:.9g},{:.9g}\n", density, s.layer_index, s.mean, s.stddev);
    return csv;
}

}  // namespace sdc
