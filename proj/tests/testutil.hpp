#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sdc/rng.hpp"
#include "sdc/tensor.hpp"

namespace sdc::testutil {

inline void fill_normal(Tensor4& t, Rng& rng, double stddev = 1.0) {
    for (double& v : t.v) v = rng.normal(0.0, stddev);
}

inline Tensor4 random_tensor(Rng& rng, int n, int c, int h, int w, double stddev = 1.0) {
    Tensor4 t(n, c, h, w);
    fill_normal(t, rng, stddev);
    return t;
}

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

/// Central finite differences on a scalar function of one flat parameter
/// vector: checks d(loss)/d(x[i]) against `analytic[i]` on up to
/// `max_coords` coordinates and returns the worst relative error.
inline double check_gradient(std::vector<double>& x, const std::function<double()>& loss,
                             const std::vector<double>& analytic, Rng& rng, int max_coords = 24,
                             double h = 1e-5) {
    double worst = 0.0;
    const int total = static_cast<int>(x.size());
    const int n_checks = std::min(max_coords, total);
    for (int s = 0; s < n_checks; ++s) {
        const int i = n_checks == total ? s : static_cast<int>(rng.uniform_int(0, total - 1));
        const double saved = x[i];
        x[i] = saved + h;
        const double up = loss();
        x[i] = saved - h;
        const double down = loss();
        x[i] = saved;
        worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    return worst;
}

/// Binomial(n, p) mean +- z sigma bounds on the realized count.
struct BinomialBound {
    double lo, hi;
};
inline BinomialBound binomial_bound(long n, double p, double z = 3.0) {
    const double mean = static_cast<double>(n) * p;
    const double sigma = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
    return {mean - z * sigma, mean + z * sigma};
}

}  // namespace sdc::testutil
