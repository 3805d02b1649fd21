#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>

#include <fmt/core.h>
#include <png.h>

#include "sdc/depth_grid.hpp"

namespace sdc {

namespace {

struct MemReader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos = 0;
};

void read_callback(png_structp png, png_bytep out, png_size_t count) {
    auto* reader = static_cast<MemReader*>(png_get_io_ptr(png));
    if (reader->pos + count > reader->size)
        png_error(png, "unexpected end of PNG stream");
    std::memcpy(out, reader->data + reader->pos, count);
    reader->pos += count;
}

void write_callback(png_structp png, png_bytep data, png_size_t count) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + count);
}

void flush_callback(png_structp) {}

void error_callback(png_structp png, png_const_charp msg) {
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    if (err) *err = msg ? msg : "libpng error";
    longjmp(png_jmpbuf(png), 1);
}

void warning_callback(png_structp, png_const_charp) {}

/// Decoded raw PNG image: rows of big-endian samples exactly as stored.
struct RawPng {
    int height = 0, width = 0;
    int bit_depth = 0;
    int channels = 0;
    std::vector<std::uint8_t> bytes;  // height * width * channels * (bit_depth/8)
};

bool looks_like_png(std::span<const std::uint8_t> bytes) {
    static const std::uint8_t magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    return bytes.size() >= 8 && std::memcmp(bytes.data(), magic, 8) == 0;
}

RawPng decode_png_raw(std::span<const std::uint8_t> bytes, const char* what) {
    if (!looks_like_png(bytes))
        throw DecodeError(fmt::format("{}: not a PNG stream (bad signature)", what));

    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, error_callback,
                                             warning_callback);
    if (!png) throw DecodeError(fmt::format("{}: failed to initialize libpng", what));
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DecodeError(fmt::format("{}: failed to initialize libpng", what));
    }

    RawPng out;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError(fmt::format("{}: malformed PNG ({})", what, err));
    }

    MemReader reader{bytes.data(), bytes.size()};
    png_set_read_fn(png, &reader, read_callback);
    png_read_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    // Normalize palette/low-bit images to 8-bit samples; keep 16-bit intact
    // and in network (big-endian) order so depth decoding is bit-exact.
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);

    out.bit_depth = png_get_bit_depth(png, info);
    out.channels = png_get_channels(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    out.bytes.resize(row_bytes * out.height);
    row_ptrs.resize(out.height);
    for (int r = 0; r < out.height; ++r)
        row_ptrs[r] = out.bytes.data() + row_bytes * r;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

std::vector<std::uint8_t> encode_png_raw(int height, int width, int bit_depth, int color_type,
                                         const std::uint8_t* bytes, const char* what) {
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, error_callback,
                                              warning_callback);
    if (!png) throw IoError(fmt::format("{}: failed to initialize libpng", what));
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError(fmt::format("{}: failed to initialize libpng", what));
    }

    std::vector<std::uint8_t> out;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(fmt::format("{}: PNG encoding failed ({})", what, err));
    }

    png_set_write_fn(png, &out, write_callback, flush_callback);
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const std::size_t row_bytes =
        static_cast<std::size_t>(width) * channels * (bit_depth / 8);
    row_ptrs.resize(height);
    for (int r = 0; r < height; ++r)
        row_ptrs[r] = const_cast<std::uint8_t*>(bytes) + row_bytes * r;
    png_write_image(png, row_ptrs.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
    return out;
}

// --- Netpbm (binary PPM/PGM) -------------------------------------------------

struct PnmHeader {
    char kind;  // '5' or '6'
    int width, height, maxval;
    std::size_t data_offset;
};

PnmHeader parse_pnm_header(std::span<const std::uint8_t> bytes, const char* what) {
    if (bytes.size() < 2 || bytes[0] != 'P')
        throw DecodeError(fmt::format("{}: not a PNM stream", what));
    PnmHeader h{};
    h.kind = static_cast<char>(bytes[1]);
    std::size_t pos = 2;
    auto next_int = [&](int& value) {
        // Skip whitespace and '#' comment lines between header fields.
        while (pos < bytes.size()) {
            if (std::isspace(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        value = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            value = value * 10 + (bytes[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) throw DecodeError(fmt::format("{}: truncated PNM header", what));
    };
    next_int(h.width);
    next_int(h.height);
    next_int(h.maxval);
    if (pos >= bytes.size() || !std::isspace(bytes[pos]))
        throw DecodeError(fmt::format("{}: malformed PNM header", what));
    h.data_offset = pos + 1;
    if (h.maxval != 255)
        throw DecodeError(fmt::format("{}: expected 8-bit PNM (maxval 255), got maxval {}", what,
                                      h.maxval));
    return h;
}

std::uint8_t quantize8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

DepthMap decode_depth_png(std::span<const std::uint8_t> bytes) {
    RawPng raw = decode_png_raw(bytes, "depth PNG");
    if (raw.bit_depth != 16)
        throw DecodeError(fmt::format("depth PNG: expected bit depth 16, got {}", raw.bit_depth));
    if (raw.channels != 1)
        throw DecodeError(fmt::format("depth PNG: expected a single channel, got {}", raw.channels));
    Grid<double> values(raw.height, raw.width, 0.0);
    const std::uint8_t* p = raw.bytes.data();
    for (int r = 0; r < raw.height; ++r) {
        for (int c = 0; c < raw.width; ++c) {
            const std::uint16_t v = static_cast<std::uint16_t>((p[0] << 8) | p[1]);
            p += 2;
            values.at(r, c) = static_cast<double>(v) / kDepthPngScale;
        }
    }
    return DepthMap(std::move(values));
}

std::vector<std::uint8_t> encode_depth_png(const DepthMap& d) {
    std::vector<std::uint8_t> rows(static_cast<std::size_t>(d.height()) * d.width() * 2);
    std::uint8_t* p = rows.data();
    for (int r = 0; r < d.height(); ++r) {
        for (int c = 0; c < d.width(); ++c) {
            const long raw = std::lround(d.at(r, c) * kDepthPngScale);
            if (raw > 65535)
                throw RangeError(fmt::format(
                    "depth {} m exceeds the 16-bit PNG range (max {} m)", d.at(r, c),
                    65535.0 / kDepthPngScale));
            *p++ = static_cast<std::uint8_t>(raw >> 8);
            *p++ = static_cast<std::uint8_t>(raw & 0xff);
        }
    }
    return encode_png_raw(d.height(), d.width(), 16, PNG_COLOR_TYPE_GRAY, rows.data(),
                          "depth PNG");
}

RgbImage decode_rgb(std::span<const std::uint8_t> bytes) {
    int height, width;
    const std::uint8_t* p;
    RawPng raw;
    std::size_t stride_extra = 0;
    if (looks_like_png(bytes)) {
        raw = decode_png_raw(bytes, "RGB PNG");
        if (raw.bit_depth != 8)
            throw DecodeError(fmt::format("RGB PNG: expected bit depth 8, got {}", raw.bit_depth));
        if (raw.channels != 3 && raw.channels != 4)
            throw DecodeError(fmt::format("RGB PNG: expected 3 channels, got {}", raw.channels));
        stride_extra = raw.channels == 4 ? 1 : 0;  // skip alpha
        height = raw.height;
        width = raw.width;
        p = raw.bytes.data();
    } else {
        const PnmHeader h = parse_pnm_header(bytes, "PPM");
        if (h.kind != '6')
            throw DecodeError(fmt::format("PPM: expected binary P6, got P{}", h.kind));
        const std::size_t need = static_cast<std::size_t>(h.width) * h.height * 3;
        if (bytes.size() < h.data_offset + need)
            throw DecodeError("PPM: truncated pixel data");
        height = h.height;
        width = h.width;
        p = bytes.data() + h.data_offset;
    }
    RgbImage img(height, width);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            for (int ch = 0; ch < 3; ++ch)
                img.set(ch, r, c, static_cast<double>(*p++) / 255.0);
            p += stride_extra;
        }
    }
    return img;
}

std::vector<std::uint8_t> encode_rgb_png(const RgbImage& img) {
    std::vector<std::uint8_t> rows(static_cast<std::size_t>(img.height()) * img.width() * 3);
    std::uint8_t* p = rows.data();
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c)
            for (int ch = 0; ch < 3; ++ch)
                *p++ = quantize8(img.at(ch, r, c));
    return encode_png_raw(img.height(), img.width(), 8, PNG_COLOR_TYPE_RGB, rows.data(),
                          "RGB PNG");
}

std::vector<std::uint8_t> encode_rgb_ppm(const RgbImage& img) {
    const std::string header = fmt::format("P6\n{} {}\n255\n", img.width(), img.height());
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + static_cast<std::size_t>(img.height()) * img.width() * 3);
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c)
            for (int ch = 0; ch < 3; ++ch)
                out.push_back(quantize8(img.at(ch, r, c)));
    return out;
}

SegMap decode_seg(std::span<const std::uint8_t> bytes) {
    int height, width;
    const std::uint8_t* p;
    RawPng raw;
    if (looks_like_png(bytes)) {
        raw = decode_png_raw(bytes, "label PNG");
        if (raw.bit_depth != 8)
            throw DecodeError(fmt::format("label PNG: expected bit depth 8, got {}", raw.bit_depth));
        if (raw.channels != 1)
            throw DecodeError(
                fmt::format("label PNG: expected a single channel, got {}", raw.channels));
        height = raw.height;
        width = raw.width;
        p = raw.bytes.data();
    } else {
        const PnmHeader h = parse_pnm_header(bytes, "PGM");
        if (h.kind != '5')
            throw DecodeError(fmt::format("PGM: expected binary P5, got P{}", h.kind));
        const std::size_t need = static_cast<std::size_t>(h.width) * h.height;
        if (bytes.size() < h.data_offset + need)
            throw DecodeError("PGM: truncated pixel data");
        height = h.height;
        width = h.width;
        p = bytes.data() + h.data_offset;
    }
    SegMap labels(height, width);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            labels.set(r, c, *p++);
    return labels;
}

std::vector<std::uint8_t> encode_seg_png(const SegMap& labels) {
    return encode_png_raw(labels.height(), labels.width(), 8, PNG_COLOR_TYPE_GRAY,
                          labels.ids().data(), "label PNG");
}

std::vector<std::uint8_t> encode_seg_pgm(const SegMap& labels) {
    const std::string header = fmt::format("P5\n{} {}\n255\n", labels.width(), labels.height());
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), labels.ids().data(), labels.ids().data() + labels.ids().size());
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open {} for reading", path.string()));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("short write to {}", path.string()));
}

DepthMap load_depth_png(const std::filesystem::path& path) {
    return decode_depth_png(read_file(path));
}
void save_depth_png(const std::filesystem::path& path, const DepthMap& d) {
    write_file(path, encode_depth_png(d));
}
RgbImage load_rgb(const std::filesystem::path& path) { return decode_rgb(read_file(path)); }
void save_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
    write_file(path, encode_rgb_png(img));
}
SegMap load_seg(const std::filesystem::path& path) { return decode_seg(read_file(path)); }
void save_seg_png(const std::filesystem::path& path, const SegMap& labels) {
    write_file(path, encode_seg_png(labels));
}

}  // namespace sdc
