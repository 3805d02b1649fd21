#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdc/depth_grid.hpp"
#include "sdc/grid.hpp"

namespace sdc {

/// How to knock pixels out of a dense depth map.
///
/// Uniform:    keep each pixel independently with probability `density`.
/// LidarBands: keep pixels on evenly spaced, mildly curved scan-line bands;
///             layer counts {8,16,32,64} target overall densities
///             {0.008, 0.016, 0.030, 0.059}.
/// Patches:    zero out `count` random ellipses (stereo-style holes).
/// CutOut:     zero out 1..count axis-aligned rectangles (augmentation).
struct SparsityPattern {
    enum class Kind { Uniform, LidarBands, Patches, CutOut };

    Kind kind = Kind::Uniform;
    double density = 1.0;        // Uniform: in (0, 1]
    int layers = 64;             // LidarBands: one of {8, 16, 32, 64}
    int count = 4;               // Patches: exact count; CutOut: maximum count
    double min_size_frac = 0.10; // hole/rect extent as a fraction of min(H, W)
    double max_size_frac = 0.25;
    std::uint64_t seed = 0;

    void validate() const;

    static SparsityPattern uniform(double density, std::uint64_t seed);
    static SparsityPattern lidar_bands(int layers, std::uint64_t seed);

    /// Compact one-token form used on the CLI: "uniform:0.05", "lidar:8",
    /// "patches:3:0.1:0.25", "cutout:4:0.1:0.25".
    static SparsityPattern parse_compact(const std::string& text, std::uint64_t seed = 0);
    std::string to_compact() const;

    /// key=value lines form used in config files; round-trips exactly.
    static SparsityPattern parse_kv(const std::string& text);
    std::string to_kv() const;
};

/// Apply a sparsity pattern. Uniform requires a fully dense input; the other
/// kinds accept any density. Never creates a valid pixel where the source was
/// missing. Deterministic given (input, pattern.seed).
DepthMap apply_pattern(const DepthMap& dense, const SparsityPattern& p);

/// Depth map tagged with the lidar band index of each valid pixel (-1 where
/// missing), needed for layer subsampling.
struct BandedDepthMap {
    DepthMap depth;
    Grid<int> band_index;
};

/// LidarBands with the band tag retained; `apply_pattern` is the untagged
/// shortcut.
BandedDepthMap apply_lidar_bands(const DepthMap& dense, int layers, std::uint64_t seed);

/// Keep only bands whose index is divisible by keep_every (1, 2, 4 or 8),
/// mirroring how fewer-layer lidars are simulated from 64-layer scans. Under
/// one seed the keep_every=4 valid set is a subset of keep_every=2.
BandedDepthMap subsample_layers(const BandedDepthMap& full, int keep_every);

/// Fully dense synthetic scene: depth + RGB + per-primitive class labels.
struct SyntheticScene {
    RgbImage rgb;
    DepthMap depth;
    SegMap labels;
    int num_classes = 0;
};

/// Piecewise scene of 3-8 slanted planes and spheres over a receding ground
/// plane, depth range [1, 90] m. Object class determines shape family, size,
/// depth band and albedo, so both geometry and color carry label information.
/// Bit-identical for identical arguments.
SyntheticScene generate_scene(std::uint64_t seed, int height, int width, int num_classes);

}  // namespace sdc
