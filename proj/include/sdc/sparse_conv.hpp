#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdc/grid.hpp"

namespace sdc {

/// Multi-channel feature grid paired with a binary validity mask.
/// Canonical form: features are exactly 0 at every pixel whose mask is 0.
struct MaskedTensor {
    int channels = 0, height = 0, width = 0;
    std::vector<double> features;  // [channels][height][width]
    MaskGrid mask;                 // [height][width], entries in {0, 1}

    MaskedTensor() = default;

    /// Validating constructor: throws DomainError unless the pair is already
    /// canonical (binary mask, zero features under mask 0).
    MaskedTensor(int channels, std::vector<double> features, MaskGrid mask);

    /// Zero out features wherever the mask is 0 instead of validating.
    static MaskedTensor canonicalize(int channels, std::vector<double> features, MaskGrid mask);

    double& at(int c, int r, int col) {
        return features[(static_cast<std::size_t>(c) * height + r) * width + col];
    }
    double at(int c, int r, int col) const {
        return features[(static_cast<std::size_t>(c) * height + r) * width + col];
    }
    bool valid(int r, int col) const { return mask.at(r, col) != 0; }
};

/// Weights and geometry of one sparsity-invariant convolution.
/// Weight layout [out_channels][in_channels][k][k]; k must be odd so "same"
/// padding is symmetric.
struct SparseConvKernel {
    int out_channels = 0, in_channels = 0;
    int k = 0, s = 1;
    std::vector<double> weights;
    std::vector<double> bias;

    SparseConvKernel() = default;
    SparseConvKernel(int out_channels, int in_channels, int k, int s);

    double& w(int oc, int ic, int ky, int kx) {
        return weights[((static_cast<std::size_t>(oc) * in_channels + ic) * k + ky) * k + kx];
    }
    double w(int oc, int ic, int ky, int kx) const {
        return weights[((static_cast<std::size_t>(oc) * in_channels + ic) * k + ky) * k + kx];
    }
    void validate() const;
};

/// Convolution normalized by the number of valid pixels in each window.
///
/// Per output pixel: if the window holds no valid pixel the output feature is
/// 0 with mask 0; otherwise feature = (sum of w*x over valid pixels) / (valid
/// count) + bias and mask = max over the window. Padding counts as invalid,
/// so image borders behave exactly like missing data. "Same" geometry:
/// output is ceil(input/s) in each spatial dimension.
MaskedTensor sparse_conv2d(const MaskedTensor& x, const SparseConvKernel& kern);

struct SparseConvGrads {
    std::vector<double> input;  // [in_channels][height][width], 0 under mask 0
    std::vector<double> weights;
    std::vector<double> bias;
};

/// Exact gradients of sparse_conv2d, treating the mask (and therefore the
/// per-window valid count) as a constant. Empty-support outputs contribute
/// nothing. `upstream` is laid out like the forward output features.
SparseConvGrads sparse_conv2d_backward(const MaskedTensor& x, const SparseConvKernel& kern,
                                       std::span<const double> upstream);

enum class MaskPool { Max, Average };

/// Propagate a validity mask through one (k, s) window, either as the binary
/// max-pool used by sparse convolution or as the real-valued average-pool
/// variant that preserves the valid/invalid ratio.
Grid<double> propagate_mask(const MaskGrid& mask, int k, int s, MaskPool mode);

/// Mean of a binary mask. Throws DomainError on non-binary entries, which
/// catches Average-mode masks being fed where Max-mode ones are expected.
double saturation(const Grid<double>& mask);
double saturation(const MaskGrid& mask);

struct LayerShape {
    int k = 3;
    int s = 1;
};

struct SaturationStats {
    int layer_index = 0;  // 1-based, after this many propagations
    double mean = 0.0;
    double stddev = 0.0;
};

/// Monte-Carlo mask-saturation profile: draw Bernoulli(density) masks, run
/// them through successive Max propagations and record the saturation after
/// each layer. The mean is taken over interior pixels only (those whose
/// accumulated window never touched the border), so stride-1 3x3 layers can
/// be checked against the closed form 1 - (1-p)^9.
std::vector<SaturationStats> saturation_profile(double density,
                                                std::span<const LayerShape> layers, int trials,
                                                int height = 64, int width = 64,
                                                std::uint64_t seed = 0x5eedu);

/// CSV rows "density,layer_index,mean,stddev" with a header line.
std::string saturation_profile_csv(double density, std::span<const SaturationStats> stats);

}  // namespace sdc
