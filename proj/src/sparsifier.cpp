#include "sdc/sparsifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <fmt/core.h>

#include "sdc/rng.hpp"

namespace sdc {

namespace {

/// In-band keep probability: the 64-layer projection covers about 5.9% of
/// image pixels while its bands cover every row, so halving the band count
/// halves the density down the {0.059, 0.030, 0.016, 0.008} ladder.
constexpr double kInBandKeepProb = 0.059;

const char* kind_name(SparsityPattern::Kind k) {
    switch (k) {
        case SparsityPattern::Kind::Uniform: return "uniform";
        case SparsityPattern::Kind::LidarBands: return "lidar";
        case SparsityPattern::Kind::Patches: return "patches";
        case SparsityPattern::Kind::CutOut: return "cutout";
    }
    return "?";
}

}  // namespace

void SparsityPattern::validate() const {
    switch (kind) {
        case Kind::Uniform:
            if (!(density > 0.0 && density <= 1.0))
                throw ConfigError(
                    fmt::format("uniform density must lie in (0, 1], got {}", density));
            break;
        case Kind::LidarBands:
            if (layers != 8 && layers != 16 && layers != 32 && layers != 64)
                throw ConfigError(
                    fmt::format("lidar layer count must be one of 8/16/32/64, got {}", layers));
            break;
        case Kind::Patches:
        case Kind::CutOut:
            if (count < 1) throw ConfigError(fmt::format("count must be >= 1, got {}", count));
            if (!(min_size_frac > 0.0 && min_size_frac <= max_size_frac && max_size_frac <= 1.0))
                throw ConfigError(fmt::format("size range [{}, {}] must satisfy 0 < min <= max <= 1",
                                              min_size_frac, max_size_frac));
            break;
    }
}

SparsityPattern SparsityPattern::uniform(double density, std::uint64_t seed) {
    SparsityPattern p;
    p.kind = Kind::Uniform;
    p.density = density;
    p.seed = seed;
    p.validate();
    return p;
}

SparsityPattern SparsityPattern::lidar_bands(int layers, std::uint64_t seed) {
    SparsityPattern p;
    p.kind = Kind::LidarBands;
    p.layers = layers;
    p.seed = seed;
    p.validate();
    return p;
}

SparsityPattern SparsityPattern::parse_compact(const std::string& text, std::uint64_t seed) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    if (parts.empty()) throw ConfigError("empty sparsity pattern");

    auto want = [&](std::size_t n) {
        if (parts.size() != n)
            throw ConfigError(fmt::format("pattern '{}': expected {} fields, got {}", text, n,
                                          parts.size()));
    };
    auto num = [&](const std::string& s) -> double {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("pattern '{}': bad number '{}'", text, s));
        }
    };

    SparsityPattern p;
    p.seed = seed;
    if (parts[0] == "uniform") {
        want(2);
        p.kind = Kind::Uniform;
        p.density = num(parts[1]);
    } else if (parts[0] == "lidar") {
        want(2);
        p.kind = Kind::LidarBands;
        p.layers = static_cast<int>(num(parts[1]));
    } else if (parts[0] == "patches" || parts[0] == "cutout") {
        p.kind = parts[0] == "patches" ? Kind::Patches : Kind::CutOut;
        if (parts.size() == 1) {
            // defaults: 1-4 holes/rects of 10-25% of the image side
        } else {
            want(4);
            p.count = static_cast<int>(num(parts[1]));
            p.min_size_frac = num(parts[2]);
            p.max_size_frac = num(parts[3]);
        }
    } else {
        throw ConfigError(fmt::format("unknown sparsity pattern kind '{}'", parts[0]));
    }
    p.validate();
    return p;
}

std::string SparsityPattern::to_compact() const {
    switch (kind) {
        case Kind::Uniform: return fmt::format("uniform:{:g}", density);
        case Kind::LidarBands: return fmt::format("lidar:{}", layers);
        case Kind::Patches:
        case Kind::CutOut:
            return fmt::format("{}:{}:{:g}:{:g}", kind_name(kind), count, min_size_frac,
                               max_size_frac);
    }
    return {};
}

SparsityPattern SparsityPattern::parse_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(fmt::format("pattern line '{}' is not key=value", line));
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }

    SparsityPattern p;
    const auto it = kv.find("kind");
    if (it == kv.end()) throw ConfigError("pattern spec misses 'kind'");
    const std::string kind = it->second;
    kv.erase(it);

    auto take = [&](const char* key, auto setter) {
        auto i = kv.find(key);
        if (i != kv.end()) {
            setter(i->second);
            kv.erase(i);
        }
    };
    auto to_d = [](const std::string& s) { return std::stod(s); };

    if (kind == "uniform") p.kind = Kind::Uniform;
    else if (kind == "lidar") p.kind = Kind::LidarBands;
    else if (kind == "patches") p.kind = Kind::Patches;
    else if (kind == "cutout") p.kind = Kind::CutOut;
    else throw ConfigError(fmt::format("unknown sparsity pattern kind '{}'", kind));

    take("density", [&](const std::string& s) { p.density = to_d(s); });
    take("layers", [&](const std::string& s) { p.layers = static_cast<int>(to_d(s)); });
    take("count", [&](const std::string& s) { p.count = static_cast<int>(to_d(s)); });
    take("min_size_frac", [&](const std::string& s) { p.min_size_frac = to_d(s); });
    take("max_size_frac", [&](const std::string& s) { p.max_size_frac = to_d(s); });
    take("seed", [&](const std::string& s) { p.seed = std::stoull(s); });
    if (!kv.empty())
        throw ConfigError(fmt::format("unknown pattern key '{}'", kv.begin()->first));
    p.validate();
    return p;
}

std::string SparsityPattern::to_kv() const {
    std::string out = fmt::format("kind={}\nseed={}\n", kind_name(kind), seed);
    switch (kind) {
        case Kind::Uniform: out += fmt::format("density={:.17g}\n", density); break;
        case Kind::LidarBands: out += fmt::format("layers={}\n", layers); break;
        case Kind::Patches:
        case Kind::CutOut:
            out += fmt::format("count={}\nmin_size_frac={:.17g}\nmax_size_frac={:.17g}\n", count,
                               min_size_frac, max_size_frac);
            break;
    }
    return out;
}

namespace {

DepthMap apply_uniform(const DepthMap& dense, double keep_prob, std::uint64_t seed) {
    if (density(dense) < 1.0)
        throw DomainError("uniform sparsification requires a fully dense input");
    Rng rng(seed);
    Grid<double> out(dense.height(), dense.width(), 0.0);
    for (int r = 0; r < dense.height(); ++r)
        for (int c = 0; c < dense.width(); ++c)
            if (rng.uniform01() < keep_prob) out.at(r, c) = dense.at(r, c);
    return DepthMap(std::move(out));
}

DepthMap apply_holes(const DepthMap& src, const SparsityPattern& p) {
    Rng rng(p.seed);
    const double side = std::min(src.height(), src.width());
    Grid<double> out = src.values();

    const int holes = p.kind == SparsityPattern::Kind::CutOut
                          ? static_cast<int>(rng.uniform_int(1, p.count))
                          : p.count;
    for (int i = 0; i < holes; ++i) {
        const double ext_r = rng.uniform(p.min_size_frac, p.max_size_frac) * side;
        const double ext_c = rng.uniform(p.min_size_frac, p.max_size_frac) * side;
        const double cy = rng.uniform(0.0, src.height() - 1.0);
        const double cx = rng.uniform(0.0, src.width() - 1.0);
        const int r0 = std::max(0, static_cast<int>(std::floor(cy - ext_r / 2)));
        const int r1 = std::min(src.height() - 1, static_cast<int>(std::ceil(cy + ext_r / 2)));
        const int c0 = std::max(0, static_cast<int>(std::floor(cx - ext_c / 2)));
        const int c1 = std::min(src.width() - 1, static_cast<int>(std::ceil(cx + ext_c / 2)));
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                if (p.kind == SparsityPattern::Kind::Patches) {
                    const double dy = (r - cy) / (ext_r / 2 + 1e-12);
                    const double dx = (c - cx) / (ext_c / 2 + 1e-12);
                    if (dy * dy + dx * dx > 1.0) continue;  // outside the ellipse
                }
                out.at(r, c) = 0.0;
            }
        }
    }
    return DepthMap(std::move(out));
}

}  // namespace

BandedDepthMap apply_lidar_bands(const DepthMap& dense, int layers, std::uint64_t seed) {
    SparsityPattern::lidar_bands(layers, seed);  // validates the layer count
    const int h = dense.height(), w = dense.width();
    const int n_bands = std::min(h, (layers * h + 63) / 64);

    Rng rng(seed);
    Grid<double> out(h, w, 0.0);
    Grid<int> band(h, w, -1);

    // One shared parabolic arc; rings droop toward the image sides. The
    // keep decision is drawn for every (band, column) regardless of outcome
    // so patterns are value-independent and band subsets nest across layers.
    const double amplitude = std::max(1.0, 0.03 * h);
    for (int b = 0; b < n_bands; ++b) {
        const int center = static_cast<int>(std::floor((b + 0.5) * h / n_bands));
        for (int c = 0; c < w; ++c) {
            const double t = w > 1 ? 2.0 * c / (w - 1) - 1.0 : 0.0;
            const int r = std::clamp(center + static_cast<int>(std::lround(amplitude * t * t)), 0,
                                     h - 1);
            const bool keep = rng.uniform01() < kInBandKeepProb;
            if (!keep) continue;
            if (dense.valid(r, c)) {
                out.at(r, c) = dense.at(r, c);
                band.at(r, c) = b;
            }
        }
    }
    return {DepthMap(std::move(out)), std::move(band)};
}

DepthMap apply_pattern(const DepthMap& dense, const SparsityPattern& p) {
    p.validate();
    switch (p.kind) {
        case SparsityPattern::Kind::Uniform: return apply_uniform(dense, p.density, p.seed);
        case SparsityPattern::Kind::LidarBands:
            return apply_lidar_bands(dense, p.layers, p.seed).depth;
        case SparsityPattern::Kind::Patches:
        case SparsityPattern::Kind::CutOut: return apply_holes(dense, p);
    }
    throw ConfigError("unreachable pattern kind");
}

BandedDepthMap subsample_layers(const BandedDepthMap& full, int keep_every) {
    if (keep_every != 1 && keep_every != 2 && keep_every != 4 && keep_every != 8)
        throw ConfigError(fmt::format("keep_every must be one of 1/2/4/8, got {}", keep_every));
    if (full.band_index.empty() || full.band_index.height() != full.depth.height() ||
        full.band_index.width() != full.depth.width())
        throw DomainError("subsample_layers: input carries no band index map");

    Grid<double> out(full.depth.height(), full.depth.width(), 0.0);
    Grid<int> band(full.depth.height(), full.depth.width(), -1);
    for (int r = 0; r < out.height(); ++r) {
        for (int c = 0; c < out.width(); ++c) {
            const int b = full.band_index.at(r, c);
            if (b < 0 || b % keep_every != 0) continue;
            out.at(r, c) = full.depth.at(r, c);
            band.at(r, c) = b;
        }
    }
    return {DepthMap(std::move(out)), std::move(band)};
}

// --- Synthetic scenes ---------------------------------------------------------

namespace {

/// Fixed palette keyed by class id so color identifies class across scenes.
constexpr double kPalette[16][3] = {
    {0.42, 0.42, 0.40},  // 0: ground
    {0.85, 0.25, 0.20}, {0.20, 0.55, 0.85}, {0.95, 0.80, 0.25}, {0.30, 0.75, 0.35},
    {0.70, 0.35, 0.80}, {0.95, 0.55, 0.20}, {0.25, 0.80, 0.75}, {0.85, 0.40, 0.60},
    {0.55, 0.65, 0.25}, {0.35, 0.40, 0.85}, {0.80, 0.70, 0.55}, {0.45, 0.25, 0.15},
    {0.60, 0.85, 0.90}, {0.90, 0.90, 0.85}, {0.15, 0.30, 0.25},
};

constexpr double kMinDepth = 1.0;
constexpr double kMaxSceneDepth = 0.9 * kDefaultMaxDepthMeters;

}  // namespace

SyntheticScene generate_scene(std::uint64_t seed, int height, int width, int num_classes) {
    if (height < 32 || width < 32)
        throw ConfigError(fmt::format("scene dimensions must be >= 32, got {}x{}", height, width));
    if (num_classes < 2 || num_classes > 16)
        throw ConfigError(fmt::format("num_classes must lie in [2, 16], got {}", num_classes));

    Rng rng(seed);
    Grid<double> depth(height, width, 0.0);
    SegMap labels(height, width, 0);

    // Global metric scale of the scene. Appearance is scale-free (a bigger
    // scene shades the same), so absolute depth is only recoverable from the
    // sparse measurements, as with real monocular imagery.
    const double metric_scale = rng.uniform(0.7, 1.3);

    // Receding ground plane with a slight lateral tilt.
    const double d_near = rng.uniform(1.6, 5.0);
    const double d_far = rng.uniform(35.0, 68.0);
    const double lateral = rng.uniform(-0.03, 0.03);
    for (int r = 0; r < height; ++r) {
        const double along = d_far + (d_near - d_far) * (static_cast<double>(r) / (height - 1));
        for (int c = 0; c < width; ++c)
            depth.at(r, c) =
                std::clamp(along + lateral * (c - width / 2.0), kMinDepth, kMaxSceneDepth);
    }

    // Objects. The class id fixes the shape family (sphere / wall / slab),
    // the depth band and the albedo, which keeps classes identifiable from
    // geometry alone as well as from color alone.
    const int n_objects = static_cast<int>(rng.uniform_int(3, 8));
    const double side = std::min(height, width);
    for (int i = 0; i < n_objects; ++i) {
        const int cls = static_cast<int>(rng.uniform_int(1, num_classes - 1));
        const int family = cls % 3;
        const double band_frac = static_cast<double>(cls) / num_classes;
        const double d0 = (3.0 + 40.0 * band_frac) * rng.uniform(0.85, 1.15);

        const double cy = rng.uniform(0.12, 0.88) * (height - 1);
        const double cx = rng.uniform(0.12, 0.88) * (width - 1);

        if (family == 1) {  // sphere bulging toward the camera
            const double radius = rng.uniform(0.07, 0.15) * side;
            const double bulge = rng.uniform(0.8, 2.5);
            const int r0 = std::max(0, static_cast<int>(cy - radius));
            const int r1 = std::min(height - 1, static_cast<int>(cy + radius));
            const int c0 = std::max(0, static_cast<int>(cx - radius));
            const int c1 = std::min(width - 1, static_cast<int>(cx + radius));
            for (int r = r0; r <= r1; ++r) {
                for (int c = c0; c <= c1; ++c) {
                    const double rho2 = ((r - cy) * (r - cy) + (c - cx) * (c - cx)) /
                                        (radius * radius);
                    if (rho2 > 1.0) continue;
                    const double d = std::clamp(d0 - bulge * std::sqrt(1.0 - rho2), kMinDepth,
                                                kMaxSceneDepth);
                    if (d < depth.at(r, c)) {
                        depth.at(r, c) = d;
                        labels.set(r, c, static_cast<std::uint8_t>(cls));
                    }
                }
            }
        } else {  // upright wall (family 2) or strongly tilted slab (family 0)
            const double half_w = rng.uniform(0.08, 0.18) * width;
            const double half_h = rng.uniform(0.10, 0.25) * height;
            const double grad_r = family == 0 ? rng.uniform(0.08, 0.18) : 0.0;
            const double grad_c = rng.uniform(-0.04, 0.04);
            const int r0 = std::max(0, static_cast<int>(cy - half_h));
            const int r1 = std::min(height - 1, static_cast<int>(cy + half_h));
            const int c0 = std::max(0, static_cast<int>(cx - half_w));
            const int c1 = std::min(width - 1, static_cast<int>(cx + half_w));
            for (int r = r0; r <= r1; ++r) {
                for (int c = c0; c <= c1; ++c) {
                    const double d = std::clamp(d0 + grad_r * (r - cy) + grad_c * (c - cx),
                                                kMinDepth, kMaxSceneDepth);
                    if (d < depth.at(r, c)) {
                        depth.at(r, c) = d;
                        labels.set(r, c, static_cast<std::uint8_t>(cls));
                    }
                }
            }
        }
    }

    for (auto& v : depth) v = std::clamp(v * metric_scale, kMinDepth, kMaxSceneDepth);

    // Shading: per-class albedo scaled by a Lambertian term from the depth
    // gradient, plus small per-channel noise.
    const double lx = rng.uniform(0.25, 0.45);
    const double ly = rng.uniform(-0.55, -0.35);
    const double lnorm = std::sqrt(lx * lx + ly * ly + 0.82 * 0.82);
    const double light[3] = {lx / lnorm, ly / lnorm, 0.82 / lnorm};

    RgbImage rgb(height, width);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const int rm = std::max(0, r - 1), rp = std::min(height - 1, r + 1);
            const int cm = std::max(0, c - 1), cp = std::min(width - 1, c + 1);
            const double gy = (depth.at(rp, c) - depth.at(rm, c)) / (rp - rm);
            const double gx = (depth.at(r, cp) - depth.at(r, cm)) / (cp - cm);
            const double nn = std::sqrt(gx * gx + gy * gy + 1.0);
            const double ndotl = (-gx * light[0] - gy * light[1] + light[2]) / nn;
            const double shade = 0.3 + 0.7 * std::max(0.0, ndotl);
            const int cls = labels.at(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                const double value = kPalette[cls][ch] * shade + rng.normal(0.0, 0.02);
                rgb.set(ch, r, c, std::clamp(value, 0.0, 1.0));
            }
        }
    }

    SyntheticScene scene;
    scene.rgb = std::move(rgb);
    scene.depth = DepthMap(std::move(depth));
    scene.labels = std::move(labels);
    scene.num_classes = num_classes;
    return scene;
}

}  // namespace sdc
