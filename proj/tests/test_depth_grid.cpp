#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <png.h>

#include "sdc/depth_grid.hpp"
#include "sdc/rng.hpp"

using namespace sdc;

namespace {

DepthMap map_from(std::initializer_list<std::initializer_list<double>> rows) {
    const int h = static_cast<int>(rows.size());
    const int w = static_cast<int>(rows.begin()->size());
    Grid<double> g(h, w, 0.0);
    int r = 0;
    for (const auto& row : rows) {
        int c = 0;
        for (double v : row) g.at(r, c++) = v;
        ++r;
    }
    return DepthMap(std::move(g));
}

// Independent PNG writer used only to feed the decoder bytes that did not
// come from our own encoder.
std::vector<std::uint8_t> libpng_encode(int height, int width, int bit_depth, int color_type,
                                        const std::vector<std::uint8_t>& raw_rows) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    auto write_cb = [](png_structp p, png_bytep data, png_size_t n) {
        auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        buf->insert(buf->end(), data, data + n);
    };
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_set_write_fn(png, &out, write_cb, nullptr);
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    int channels = 1;
    if (color_type == PNG_COLOR_TYPE_RGB) channels = 3;
    if (color_type == PNG_COLOR_TYPE_RGBA) channels = 4;
    const std::size_t row_bytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
    std::vector<png_bytep> ptrs(height);
    for (int r = 0; r < height; ++r)
        ptrs[r] = const_cast<std::uint8_t*>(raw_rows.data()) + r * row_bytes;
    png_write_image(png, ptrs.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
    return out;
}

}  // namespace

TEST_CASE("decode_depth_png applies the /256 scale with 0 as missing") {
    // 1x3 16-bit PNG with raws {0, 256, 65535}, big-endian rows.
    const std::vector<std::uint8_t> rows = {0x00, 0x00, 0x01, 0x00, 0xff, 0xff};
    const auto png = libpng_encode(1, 3, 16, PNG_COLOR_TYPE_GRAY, rows);
    const DepthMap d = decode_depth_png(png);
    CHECK(d.height() == 1);
    CHECK(d.width() == 3);
    CHECK(d.at(0, 0) == 0.0);
    CHECK_FALSE(d.valid(0, 0));
    CHECK(d.at(0, 1) == 1.0);
    CHECK(d.at(0, 2) == 255.99609375);  // 65535/256 is exactly representable
}

TEST_CASE("decode_depth_png rejects wrong bit depth, channels, and garbage") {
    const std::vector<std::uint8_t> rows8 = {1, 2, 3};
    CHECK_THROWS_WITH_AS(decode_depth_png(libpng_encode(1, 3, 8, PNG_COLOR_TYPE_GRAY, rows8)),
                         doctest::Contains("bit depth"), DecodeError);

    const std::vector<std::uint8_t> rgb_rows(1 * 2 * 3 * 2, 0);
    CHECK_THROWS_WITH_AS(decode_depth_png(libpng_encode(1, 2, 16, PNG_COLOR_TYPE_RGB, rgb_rows)),
                         doctest::Contains("channel"), DecodeError);

    std::vector<std::uint8_t> garbage = {1, 2, 3, 4};
    CHECK_THROWS_AS(decode_depth_png(garbage), DecodeError);

    auto truncated = libpng_encode(1, 3, 16, PNG_COLOR_TYPE_GRAY,
                                   std::vector<std::uint8_t>(6, 0));
    truncated.resize(truncated.size() / 2);
    CHECK_THROWS_AS(decode_depth_png(truncated), DecodeError);
}

TEST_CASE("encode_depth_png quantizes to 1/256 m and round-trips") {
    const DepthMap d = map_from({{0.0, 1.0, 123.456}});
    const DepthMap back = decode_depth_png(encode_depth_png(d));
    CHECK(back.at(0, 0) == 0.0);
    CHECK(back.at(0, 1) == 1.0);
    // round(123.456 * 256) = 31605 -> 123.45703125 m
    CHECK(back.at(0, 2) == 123.45703125);  // 31605/256 is exactly representable
}

TEST_CASE("encode_depth_png rejects out-of-range depths naming the value") {
    const DepthMap d = map_from({{300.0}});
    CHECK_THROWS_WITH_AS(encode_depth_png(d), doctest::Contains("300"), RangeError);
}

TEST_CASE("encode/decode round trip is bit-exact on random uint16 grids") {
    Rng rng(2024);
    for (int trial = 0; trial < 5; ++trial) {
        const int h = 1 + static_cast<int>(rng.uniform_int(0, 30));
        const int w = 1 + static_cast<int>(rng.uniform_int(0, 30));
        Grid<double> g(h, w, 0.0);
        std::vector<std::uint16_t> raw(static_cast<std::size_t>(h) * w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                raw[r * w + c] = static_cast<std::uint16_t>(rng.uniform_int(0, 65535));
                g.at(r, c) = raw[r * w + c] / kDepthPngScale;
            }
        const DepthMap back = decode_depth_png(encode_depth_png(DepthMap(g)));
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                CHECK(back.at(r, c) * kDepthPngScale == static_cast<double>(raw[r * w + c]));
    }
}

TEST_CASE("density counts valid pixels") {
    CHECK(density(DepthMap(2, 2)) == 0.0);
    CHECK(density(map_from({{1.0, 2.0}, {3.0, 4.0}})) == 1.0);
    CHECK(density(map_from({{1.0, 0.0}, {0.0, 0.0}})) == 0.25);
}

TEST_CASE("sparse_downsample takes block maxima and zeros lose") {
    const DepthMap d = map_from({{0.0, 0.0, 1.0, 2.0},
                                 {0.0, 7.5, 3.0, 4.0},
                                 {0.0, 0.0, 0.0, 0.0},
                                 {0.0, 0.0, 0.0, 0.0}});
    const DepthMap down = sparse_downsample(d, 2);
    CHECK(down.height() == 2);
    CHECK(down.at(0, 0) == 7.5);
    CHECK(down.at(0, 1) == 4.0);
    CHECK(down.at(1, 0) == 0.0);
    CHECK_FALSE(down.valid(1, 1));
}

TEST_CASE("sparse_downsample: one valid pixel in a 4x4 gives density 0.25") {
    Grid<double> g(4, 4, 0.0);
    g.at(1, 2) = 5.0;
    const DepthMap down = sparse_downsample(DepthMap(std::move(g)), 2);
    CHECK(density(down) == 0.25);
}

TEST_CASE("sparse_downsample rejects non-divisible factors") {
    CHECK_THROWS_AS(sparse_downsample(DepthMap(4, 6), 4), ShapeError);
}

TEST_CASE("density never decreases under downsampling") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Grid<double> g(8, 12, 0.0);
        for (auto& v : g)
            if (rng.uniform01() < 0.3) v = rng.uniform(0.5, 50.0);
        const DepthMap d(std::move(g));
        for (int f : {2, 4})
            CHECK(density(sparse_downsample(d, f)) >= density(d));
    }
}

TEST_CASE("to_inverse converts meters to 1/km, keeping missing at 0") {
    const InverseDepthMap inv = to_inverse(map_from({{500.0, 0.0, 1.0}}));
    CHECK(inv.at(0, 0) == 2.0);
    CHECK(inv.at(0, 1) == 0.0);
    CHECK(inv.at(0, 2) == 1000.0);
}

TEST_CASE("from_inverse reciprocates and maps non-activation to d_max") {
    Grid<double> g(1, 3, 0.0);
    g.at(0, 0) = 2.0;
    g.at(0, 1) = 0.0;
    g.at(0, 2) = 1000.0 / 100.0;  // continuity point
    const DepthMap d = from_inverse(InverseDepthMap(std::move(g)), 100.0);
    CHECK(d.at(0, 0) == 500.0);
    CHECK(d.at(0, 1) == 100.0);
    CHECK(d.at(0, 2) == 100.0);
    CHECK(density(d) == 1.0);
}

TEST_CASE("from_inverse output is always fully dense") {
    Rng rng(11);
    Grid<double> g(6, 6, 0.0);
    for (auto& v : g)
        if (rng.uniform01() < 0.5) v = rng.uniform(5.0, 900.0);
    const DepthMap d = from_inverse(InverseDepthMap(std::move(g)), 80.0);
    CHECK(density(d) == 1.0);
}

TEST_CASE("inverse round trip is exact to 1e-9 relative on valid pixels") {
    Rng rng(12);
    Grid<double> g(8, 8, 0.0);
    for (auto& v : g)
        if (rng.uniform01() < 0.7) v = rng.uniform(0.5, 250.0);
    const DepthMap d(std::move(g));
    const DepthMap back = from_inverse(to_inverse(d), 100.0);
    for (int r = 0; r < d.height(); ++r)
        for (int c = 0; c < d.width(); ++c)
            if (d.valid(r, c))
                CHECK(std::abs(back.at(r, c) - d.at(r, c)) <= 1e-9 * d.at(r, c));
}

TEST_CASE("DepthMap rejects negative and non-finite values") {
    Grid<double> g(1, 2, 0.0);
    g.at(0, 0) = -1.0;
    CHECK_THROWS_AS(DepthMap(std::move(g)), RangeError);
    Grid<double> g2(1, 2, 0.0);
    g2.at(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(DepthMap(std::move(g2)), RangeError);
}

TEST_CASE("RgbImage enforces [0,1] intensities") {
    RgbImage img(2, 2);
    CHECK_THROWS_AS(img.set(0, 0, 0, 1.5), RangeError);
    CHECK_THROWS_AS(img.set(1, 1, 1, -0.1), RangeError);
}

TEST_CASE("rgb PNG and PPM round trip at 8-bit precision") {
    Rng rng(13);
    RgbImage img(5, 7);
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 7; ++c)
                img.set(ch, r, c, std::floor(rng.uniform01() * 255.0) / 255.0);
    CHECK(decode_rgb(encode_rgb_png(img)) == img);
    CHECK(decode_rgb(encode_rgb_ppm(img)) == img);
}

TEST_CASE("seg PNG and PGM round trip exactly, including IGNORE") {
    SegMap labels(4, 3, 0);
    labels.set(0, 0, 3);
    labels.set(1, 2, kIgnoreLabel);
    labels.set(3, 1, 15);
    CHECK(decode_seg(encode_seg_png(labels)) == labels);
    CHECK(decode_seg(encode_seg_pgm(labels)) == labels);
    CHECK(decode_seg(encode_seg_png(labels)).ignored(1, 2));
}

TEST_CASE("decode_rgb accepts RGBA by dropping alpha and rejects 16-bit") {
    const std::vector<std::uint8_t> rgba = {10, 20, 30, 255, 40, 50, 60, 255};
    const RgbImage img = decode_rgb(libpng_encode(1, 2, 8, PNG_COLOR_TYPE_RGBA, rgba));
    CHECK(img.at(0, 0, 0) == doctest::Approx(10.0 / 255.0));
    CHECK(img.at(2, 0, 1) == doctest::Approx(60.0 / 255.0));

    const std::vector<std::uint8_t> rows16(2 * 3 * 2, 0);
    CHECK_THROWS_AS(decode_rgb(libpng_encode(1, 2, 16, PNG_COLOR_TYPE_RGB, rows16)), DecodeError);
}
