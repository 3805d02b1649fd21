#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

#include "sdc/errors.hpp"

namespace sdc {

/// Dense NCHW tensor of doubles. Shape components must be >= 1 for a
/// non-empty tensor; a default-constructed Tensor4 is the empty sentinel.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, double fill = 0.0)
        : n(n_), c(c_), h(h_), w(w_),
          v(checked_numel(n_, c_, h_, w_), fill) {}

    std::size_t numel() const { return v.size(); }
    bool empty() const { return v.empty(); }

    double& at(int in, int ic, int iy, int ix) {
        assert(in >= 0 && in < n && ic >= 0 && ic < c && iy >= 0 && iy < h && ix >= 0 && ix < w);
        return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    double at(int in, int ic, int iy, int ix) const {
        return const_cast<Tensor4*>(this)->at(in, ic, iy, ix);
    }

    /// Pointer to the start of row (in, ic, iy).
    double* row(int in, int ic, int iy) {
        return v.data() + ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w;
    }
    const double* row(int in, int ic, int iy) const {
        return v.data() + ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w;
    }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    friend bool operator==(const Tensor4&, const Tensor4&) = default;

  private:
    static std::size_t checked_numel(int n, int c, int h, int w) {
        if (n < 1 || c < 1 || h < 1 || w < 1)
            throw ShapeError("Tensor4 shape components must be >= 1");
        return static_cast<std::size_t>(n) * c * h * w;
    }
};

}  // namespace sdc
