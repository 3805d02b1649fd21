#include "sdc/depth_grid.hpp"

#include <cmath>

#include <fmt/core.h>

namespace sdc {

DepthMap::DepthMap(Grid<double> values) : values_(std::move(values)) {
    for (double v : values_) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw RangeError(fmt::format("DepthMap values must be finite and >= 0, got {}", v));
    }
}

InverseDepthMap::InverseDepthMap(Grid<double> values) : values_(std::move(values)) {
    for (double v : values_) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw RangeError(fmt::format("InverseDepthMap values must be finite and >= 0, got {}", v));
    }
}

RgbImage::RgbImage(Grid<double> r, Grid<double> g, Grid<double> b)
    : planes_{std::move(r), std::move(g), std::move(b)} {
    if (!planes_[0].same_shape(planes_[1]) || !planes_[0].same_shape(planes_[2]))
        throw ShapeError("RgbImage channel planes must share dimensions");
    for (const auto& plane : planes_)
        for (double v : plane)
            if (!(v >= 0.0 && v <= 1.0))
                throw RangeError(fmt::format("RgbImage intensities must lie in [0, 1], got {}", v));
}

void RgbImage::set(int ch, int r, int c, double value) {
    if (!(value >= 0.0 && value <= 1.0))
        throw RangeError(fmt::format("RgbImage intensities must lie in [0, 1], got {}", value));
    planes_[ch].at(r, c) = value;
}

double density(const DepthMap& d) {
    if (d.values().empty()) return 0.0;
    std::size_t valid = 0;
    for (double v : d.values())
        if (v > 0.0) ++valid;
    return static_cast<double>(valid) / static_cast<double>(d.values().size());
}

DepthMap sparse_downsample(const DepthMap& d, int factor) {
    if (factor < 1)
        throw ShapeError(fmt::format("downsample factor must be >= 1, got {}", factor));
    if (d.height() % factor != 0 || d.width() % factor != 0)
        throw ShapeError(fmt::format("downsample factor {} does not divide {}x{}", factor,
                                     d.height(), d.width()));
    Grid<double> out(d.height() / factor, d.width() / factor, 0.0);
    for (int r = 0; r < out.height(); ++r) {
        for (int c = 0; c < out.width(); ++c) {
            double best = 0.0;  // missing unless some pixel in the block is valid
            for (int dr = 0; dr < factor; ++dr)
                for (int dc = 0; dc < factor; ++dc)
                    best = std::max(best, d.at(r * factor + dr, c * factor + dc));
            out.at(r, c) = best;
        }
    }
    return DepthMap(std::move(out));
}

InverseDepthMap to_inverse(const DepthMap& d) {
    Grid<double> out(d.height(), d.width(), 0.0);
    for (int r = 0; r < d.height(); ++r)
        for (int c = 0; c < d.width(); ++c)
            if (d.valid(r, c)) out.at(r, c) = 1000.0 / d.at(r, c);
    return InverseDepthMap(std::move(out));
}

DepthMap from_inverse(const InverseDepthMap& inv, double d_max_meters) {
    if (!(d_max_meters > 0.0))
        throw RangeError(fmt::format("d_max must be > 0, got {}", d_max_meters));
    Grid<double> out(inv.height(), inv.width(), 0.0);
    for (int r = 0; r < inv.height(); ++r) {
        for (int c = 0; c < inv.width(); ++c) {
            const double i = inv.at(r, c);
            out.at(r, c) = i > 0.0 ? 1000.0 / i : d_max_meters;
        }
    }
    return DepthMap(std::move(out));
}

}  // namespace sdc
