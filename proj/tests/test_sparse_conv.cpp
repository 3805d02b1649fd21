#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sdc/net.hpp"
#include "sdc/sparse_conv.hpp"
#include "testutil.hpp"

using namespace sdc;
using namespace sdc::testutil;

namespace {

MaskedTensor random_masked(Rng& rng, int channels, int h, int w, double density) {
    MaskGrid mask(h, w, 0);
    for (auto& m : mask) m = rng.uniform01() < density ? 1 : 0;
    std::vector<double> feats(static_cast<std::size_t>(channels) * h * w);
    for (auto& v : feats) v = rng.normal();
    return MaskedTensor::canonicalize(channels, std::move(feats), std::move(mask));
}

SparseConvKernel random_kernel(Rng& rng, int oc, int ic, int k, int s) {
    SparseConvKernel kern(oc, ic, k, s);
    for (auto& w : kern.weights) w = rng.normal();
    for (auto& b : kern.bias) b = rng.normal(0.0, 0.1);
    return kern;
}

}  // namespace

TEST_CASE("normalized sum over the valid window: {2,4} valid of 9 -> 3.0") {
    MaskGrid mask(3, 3, 0);
    std::vector<double> feats(9, 0.0);
    mask.at(0, 1) = 1;
    feats[1] = 2.0;
    mask.at(2, 2) = 1;
    feats[8] = 4.0;
    const MaskedTensor x(1, feats, mask);

    SparseConvKernel kern(1, 1, 3, 1);
    std::fill(kern.weights.begin(), kern.weights.end(), 1.0);
    const MaskedTensor y = sparse_conv2d(x, kern);
    CHECK(y.at(0, 1, 1) == 3.0);
    CHECK(y.valid(1, 1));
}

TEST_CASE("empty support gives feature 0 and mask 0, bias not applied") {
    MaskedTensor x = MaskedTensor::canonicalize(1, std::vector<double>(25, 0.0),
                                                MaskGrid(5, 5, 0));
    x.mask.at(0, 0) = 1;
    x.features[0] = 9.0;
    SparseConvKernel kern(1, 1, 3, 1);
    std::fill(kern.weights.begin(), kern.weights.end(), 1.0);
    kern.bias[0] = 0.5;
    const MaskedTensor y = sparse_conv2d(x, kern);
    CHECK(y.at(0, 4, 4) == 0.0);
    CHECK_FALSE(y.valid(4, 4));
    // where support exists, bias applies
    CHECK(y.at(0, 0, 0) == doctest::Approx(9.5));
}

TEST_CASE("full mask reduces to dense conv with weights/(k*k) on interior pixels") {
    Rng rng(31);
    const int h = 9, w = 11, ic = 3, oc = 2, k = 3;
    MaskedTensor x = random_masked(rng, ic, h, w, 1.1);  // density > 1 -> all valid
    SparseConvKernel kern = random_kernel(rng, oc, ic, k, 1);

    Tensor4 xd(1, ic, h, w);
    for (int c = 0; c < ic; ++c)
        for (int r = 0; r < h; ++r)
            for (int cc = 0; cc < w; ++cc) xd.at(0, c, r, cc) = x.at(c, r, cc);
    Tensor4 wd(oc, ic, k, k);
    for (std::size_t i = 0; i < kern.weights.size(); ++i) wd.v[i] = kern.weights[i] / (k * k);

    const MaskedTensor ys = sparse_conv2d(x, kern);
    const Tensor4 yd = dense_conv2d(xd, wd, kern.bias, 1);
    for (int c = 0; c < oc; ++c)
        for (int r = 1; r < h - 1; ++r)
            for (int cc = 1; cc < w - 1; ++cc)
                CHECK(std::abs(ys.at(c, r, cc) - yd.at(0, c, r, cc)) <= 1e-12);
}

TEST_CASE("full-mask reduction is exact everywhere for 1x1 kernels") {
    Rng rng(32);
    MaskedTensor x = random_masked(rng, 2, 6, 6, 1.1);
    SparseConvKernel kern = random_kernel(rng, 3, 2, 1, 1);
    Tensor4 xd(1, 2, 6, 6);
    for (int c = 0; c < 2; ++c)
        for (int r = 0; r < 6; ++r)
            for (int cc = 0; cc < 6; ++cc) xd.at(0, c, r, cc) = x.at(c, r, cc);
    Tensor4 wd(3, 2, 1, 1);
    wd.v.assign(kern.weights.begin(), kern.weights.end());
    const MaskedTensor ys = sparse_conv2d(x, kern);
    const Tensor4 yd = dense_conv2d(xd, wd, kern.bias, 1);
    for (std::size_t i = 0; i < ys.features.size(); ++i)
        CHECK(std::abs(ys.features[i] - yd.v[i]) <= 1e-12);
}

TEST_CASE("missing-data invariance: masked-out inputs never matter (exact)") {
    Rng rng(33);
    for (int trial = 0; trial < 10; ++trial) {
        MaskedTensor x = random_masked(rng, 2, 8, 8, 0.35);
        SparseConvKernel kern = random_kernel(rng, 3, 2, 3, trial % 2 ? 2 : 1);
        const MaskedTensor y = sparse_conv2d(x, kern);

        MaskedTensor perturbed = x;
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c)
                if (!perturbed.valid(r, c))
                    for (int ch = 0; ch < 2; ++ch)
                        perturbed.at(ch, r, c) = rng.normal(0.0, 100.0);
        // The canonicalizing constructor zeroes them again; bypass it by
        // running the kernel on the raw struct.
        const MaskedTensor y2 = sparse_conv2d(perturbed, kern);
        CHECK(y.features == y2.features);
        CHECK(y.mask == y2.mask);
    }
}

TEST_CASE("scale equivariance with zero bias") {
    Rng rng(34);
    MaskedTensor x = random_masked(rng, 2, 7, 7, 0.4);
    SparseConvKernel kern = random_kernel(rng, 2, 2, 3, 1);
    std::fill(kern.bias.begin(), kern.bias.end(), 0.0);

    const MaskedTensor y = sparse_conv2d(x, kern);

    SUBCASE("power-of-two scale is bit-exact") {
        MaskedTensor x2 = x;
        for (auto& v : x2.features) v *= 4.0;
        const MaskedTensor y2 = sparse_conv2d(x2, kern);
        for (std::size_t i = 0; i < y.features.size(); ++i)
            CHECK(y2.features[i] == 4.0 * y.features[i]);
    }
    SUBCASE("generic scale within 1e-12 relative") {
        MaskedTensor x2 = x;
        for (auto& v : x2.features) v *= 1.7;
        const MaskedTensor y2 = sparse_conv2d(x2, kern);
        for (std::size_t i = 0; i < y.features.size(); ++i)
            CHECK(rel_err(y2.features[i], 1.7 * y.features[i]) <= 1e-12);
    }
}

TEST_CASE("canonical form is preserved and validated") {
    Rng rng(35);
    MaskedTensor x = random_masked(rng, 2, 6, 6, 0.3);
    SparseConvKernel kern = random_kernel(rng, 2, 2, 3, 1);
    const MaskedTensor y = sparse_conv2d(x, kern);
    for (int r = 0; r < y.height; ++r)
        for (int c = 0; c < y.width; ++c)
            if (!y.valid(r, c))
                for (int ch = 0; ch < y.channels; ++ch) CHECK(y.at(ch, r, c) == 0.0);

    std::vector<double> bad(4, 1.0);
    MaskGrid mask(2, 2, 0);
    CHECK_THROWS_AS(MaskedTensor(1, bad, mask), DomainError);
    MaskGrid nonbinary(2, 2, 2);
    CHECK_THROWS_AS(MaskedTensor(1, std::vector<double>(4, 0.0), nonbinary), DomainError);
}

TEST_CASE("channel mismatch raises ShapeError") {
    Rng rng(36);
    MaskedTensor x = random_masked(rng, 2, 5, 5, 0.5);
    SparseConvKernel kern = random_kernel(rng, 2, 3, 3, 1);
    CHECK_THROWS_AS(sparse_conv2d(x, kern), ShapeError);
    CHECK_THROWS_AS(sparse_conv2d_backward(x, kern, std::vector<double>(50, 0.0)), ShapeError);
}

TEST_CASE("backward: zero upstream gives zero grads; single-pixel window by hand") {
    Rng rng(37);
    MaskedTensor x = random_masked(rng, 1, 5, 5, 0.3);
    SparseConvKernel kern = random_kernel(rng, 1, 1, 3, 1);
    const MaskedTensor y = sparse_conv2d(x, kern);
    const std::size_t out_size = static_cast<std::size_t>(y.height) * y.width;

    SparseConvGrads zero = sparse_conv2d_backward(x, kern, std::vector<double>(out_size, 0.0));
    for (double g : zero.input) CHECK(g == 0.0);
    for (double g : zero.weights) CHECK(g == 0.0);
    for (double g : zero.bias) CHECK(g == 0.0);

    // Single valid pixel: gradient wrt that pixel is upstream * w / 1.
    MaskGrid mask(3, 3, 0);
    mask.at(1, 1) = 1;
    std::vector<double> feats(9, 0.0);
    feats[4] = 2.5;
    const MaskedTensor single(1, feats, mask);
    std::vector<double> upstream(9, 0.0);
    upstream[0] = 1.0;  // output pixel (0,0); window sees only (1,1) via tap (2,2)
    const SparseConvGrads g = sparse_conv2d_backward(single, kern, upstream);
    CHECK(g.input[4] == doctest::Approx(kern.w(0, 0, 2, 2)).epsilon(1e-15));
}

TEST_CASE("backward matches central finite differences on random instances") {
    Rng rng(38);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int ic = 1 + trial % 3, oc = 1 + (trial / 2) % 3;
        const int s = trial % 2 ? 2 : 1;
        MaskedTensor x = random_masked(rng, ic, 6, 6, 0.45);
        SparseConvKernel kern = random_kernel(rng, oc, ic, 3, s);

        // Scalar loss: weighted sum of outputs.
        const MaskedTensor y0 = sparse_conv2d(x, kern);
        std::vector<double> w_loss(y0.features.size());
        for (auto& v : w_loss) v = rng.normal();
        auto loss = [&] {
            const MaskedTensor y = sparse_conv2d(x, kern);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.features.size(); ++i) acc += w_loss[i] * y.features[i];
            return acc;
        };
        const SparseConvGrads g = sparse_conv2d_backward(x, kern, w_loss);

        worst = std::max(worst, check_gradient(kern.weights, loss, g.weights, rng, 8));
        worst = std::max(worst, check_gradient(kern.bias, loss, g.bias, rng, 2));
        // Input grads only meaningful at valid pixels (mask is a constant).
        std::vector<double> in_analytic = g.input;
        worst = std::max(worst, check_gradient(x.features, loss, in_analytic, rng, 8));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("propagate_mask: fixpoint, dilation, and average ratios") {
    MaskGrid ones(4, 4, 1);
    const Grid<double> still = propagate_mask(ones, 3, 1, MaskPool::Max);
    for (double v : still) CHECK(v == 1.0);

    MaskGrid single(5, 5, 0);
    single.at(2, 2) = 1;
    const Grid<double> dilated = propagate_mask(single, 3, 1, MaskPool::Max);
    int count = 0;
    for (double v : dilated) count += v == 1.0;
    CHECK(count == 9);
    CHECK(dilated.at(1, 1) == 1.0);
    CHECK(dilated.at(0, 0) == 0.0);

    // Checkerboard, interior 3x3 windows hold 5 or 4 valid of 9.
    MaskGrid board(6, 6, 0);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) board.at(r, c) = (r + c) % 2 == 0 ? 1 : 0;
    const Grid<double> avg = propagate_mask(board, 3, 1, MaskPool::Average);
    CHECK(avg.at(2, 2) == doctest::Approx(5.0 / 9.0));
    CHECK(avg.at(2, 3) == doctest::Approx(4.0 / 9.0));
}

TEST_CASE("saturation: means, binomial agreement, and non-binary rejection") {
    CHECK(saturation(MaskGrid(3, 3, 0)) == 0.0);
    CHECK(saturation(MaskGrid(3, 3, 1)) == 1.0);

    Rng rng(39);
    const double p = 0.2;
    MaskGrid mask(80, 80, 0);
    long valid = 0;
    for (auto& m : mask) {
        m = rng.uniform01() < p ? 1 : 0;
        valid += m;
    }
    const auto bound = binomial_bound(80 * 80, p);
    CHECK(static_cast<double>(valid) >= bound.lo);
    CHECK(static_cast<double>(valid) <= bound.hi);
    CHECK(saturation(mask) == doctest::Approx(valid / 6400.0));

    Grid<double> fractional(2, 2, 0.5);
    CHECK_THROWS_AS(saturation(fractional), DomainError);
}

TEST_CASE("saturation_profile matches the Bernoulli closed form at density 0.3") {
    const LayerShape layers[] = {{3, 1}};
    const auto stats = saturation_profile(0.3, layers, 100);
    const double analytic = 1.0 - std::pow(0.7, 9.0);
    CHECK(std::abs(stats[0].mean - analytic) <= 0.01);
}

TEST_CASE("saturation_profile: density 1 saturates every layer; sequences are monotone") {
    const LayerShape chain[] = {{3, 1}, {3, 1}, {3, 1}};
    const auto dense = saturation_profile(1.0, chain, 3);
    for (const auto& s : dense) CHECK(s.mean == 1.0);

    for (double density : {0.05, 0.1, 0.3}) {
        const auto stats = saturation_profile(density, chain, 25);
        for (std::size_t i = 1; i < stats.size(); ++i)
            CHECK(stats[i].mean >= stats[i - 1].mean - 1e-12);
        CHECK(stats.back().mean <= 1.0);
    }
}

TEST_CASE("saturation_profile CSV has the documented columns") {
    const LayerShape layers[] = {{3, 1}, {3, 2}};
    const auto stats = saturation_profile(0.2, layers, 10);
    const std::string csv = saturation_profile_csv(0.2, stats);
    CHECK(csv.rfind("density,layer_index,mean,stddev\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("saturation_profile validates inputs") {
    const LayerShape layers[] = {{3, 1}};
    CHECK_THROWS_AS(saturation_profile(0.0, layers, 10), ConfigError);
    CHECK_THROWS_AS(saturation_profile(1.2, layers, 10), ConfigError);
    CHECK_THROWS_AS(saturation_profile(0.5, layers, 0), ConfigError);
}
