#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sdc/grid.hpp"

namespace sdc {

/// Raw 16-bit PNG value 256 corresponds to 1 meter (Kitti depth devkit
/// convention); raw 0 encodes a missing measurement.
inline constexpr double kDepthPngScale = 256.0;

/// Segmentation label reserved for "do not evaluate".
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Default maximum representable depth for the inverse-depth output mapping.
/// The choice is a configuration value; 100 m suits the synthetic scenes and
/// the Kitti depth range alike.
inline constexpr double kDefaultMaxDepthMeters = 100.0;

/// 2-D grid of metric depths in meters. Exactly 0 means "no measurement";
/// validity is always derived as value > 0, never stored separately.
/// Immutable after construction.
class DepthMap {
  public:
    DepthMap() = default;
    DepthMap(int height, int width) : values_(height, width, 0.0) {}
    explicit DepthMap(Grid<double> values);

    int height() const { return values_.height(); }
    int width() const { return values_.width(); }
    double at(int r, int c) const { return values_.at(r, c); }
    bool valid(int r, int c) const { return values_.at(r, c) > 0.0; }
    const Grid<double>& values() const { return values_; }

    friend bool operator==(const DepthMap&, const DepthMap&) = default;

  private:
    Grid<double> values_;
};

/// Inverse depth in 1/km; 0 encodes non-activation. Stored in 1/km (not 1/m)
/// so that an L1 loss over these values is numerically an iMAE.
class InverseDepthMap {
  public:
    InverseDepthMap() = default;
    InverseDepthMap(int height, int width) : values_(height, width, 0.0) {}
    explicit InverseDepthMap(Grid<double> values);

    int height() const { return values_.height(); }
    int width() const { return values_.width(); }
    double at(int r, int c) const { return values_.at(r, c); }
    const Grid<double>& values() const { return values_; }

    friend bool operator==(const InverseDepthMap&, const InverseDepthMap&) = default;

  private:
    Grid<double> values_;
};

/// Three-channel image with intensities in [0, 1].
class RgbImage {
  public:
    RgbImage() = default;
    RgbImage(int height, int width)
        : planes_{Grid<double>(height, width, 0.0), Grid<double>(height, width, 0.0),
                  Grid<double>(height, width, 0.0)} {}
    RgbImage(Grid<double> r, Grid<double> g, Grid<double> b);

    int height() const { return planes_[0].height(); }
    int width() const { return planes_[0].width(); }
    double at(int ch, int r, int c) const { return planes_[ch].at(r, c); }
    void set(int ch, int r, int c, double value);
    const Grid<double>& plane(int ch) const { return planes_[ch]; }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;

  private:
    Grid<double> planes_[3];
};

/// Per-pixel class ids; 255 is the IGNORE sentinel. The class count is not
/// stored; operations that need it take it as a parameter and validate there.
class SegMap {
  public:
    SegMap() = default;
    SegMap(int height, int width, std::uint8_t fill = 0) : ids_(height, width, fill) {}
    explicit SegMap(MaskGrid ids) : ids_(std::move(ids)) {}

    int height() const { return ids_.height(); }
    int width() const { return ids_.width(); }
    std::uint8_t at(int r, int c) const { return ids_.at(r, c); }
    void set(int r, int c, std::uint8_t id) { ids_.at(r, c) = id; }
    bool ignored(int r, int c) const { return ids_.at(r, c) == kIgnoreLabel; }
    const MaskGrid& ids() const { return ids_; }

    friend bool operator==(const SegMap&, const SegMap&) = default;

  private:
    MaskGrid ids_;
};

/// Fraction of pixels carrying a valid measurement, in [0, 1].
double density(const DepthMap& d);

/// Max-pool the depth map by an integer factor. Valid pixels always win over
/// missing ones, so density never decreases. The factor must divide both
/// dimensions.
DepthMap sparse_downsample(const DepthMap& d, int factor);

/// Meters -> 1/km on valid pixels; missing stays 0.
InverseDepthMap to_inverse(const DepthMap& d);

/// 1/km -> meters; 0 (non-activation) maps to d_max. The result is always
/// fully dense.
DepthMap from_inverse(const InverseDepthMap& inv, double d_max_meters);

// --- Bit-exact file I/O -----------------------------------------------------
//
// Depth: 16-bit single-channel PNG, depth_m = raw / 256, raw 0 = missing.
// RGB:   8-bit PNG (RGB) or binary PPM (P6).
// SegMap: 8-bit grayscale PNG or binary PGM (P5), 255 = IGNORE.

DepthMap decode_depth_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_depth_png(const DepthMap& d);

RgbImage decode_rgb(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_rgb_png(const RgbImage& img);
std::vector<std::uint8_t> encode_rgb_ppm(const RgbImage& img);

SegMap decode_seg(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_seg_png(const SegMap& labels);
std::vector<std::uint8_t> encode_seg_pgm(const SegMap& labels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

DepthMap load_depth_png(const std::filesystem::path& path);
void save_depth_png(const std::filesystem::path& path, const DepthMap& d);
RgbImage load_rgb(const std::filesystem::path& path);
void save_rgb_png(const std::filesystem::path& path, const RgbImage& img);
SegMap load_seg(const std::filesystem::path& path);
void save_seg_png(const std::filesystem::path& path, const SegMap& labels);

}  // namespace sdc
