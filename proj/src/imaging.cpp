#include "ensel/imaging.hpp"

#include "ensel/error.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ensel {

ImageU8::ImageU8(int h, int w, Rgb fill) : height(h), width(w) {
    if (h <= 0 || w <= 0) throw Error(Errc::invalid_argument, "image dimensions must be positive");
    pixels.resize(static_cast<std::size_t>(h) * w * 3);
    for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + i);
}

ImageU8::ImageU8(int h, int w, std::vector<std::uint8_t> data) : height(h), width(w), pixels(std::move(data)) {
    if (h <= 0 || w <= 0) throw Error(Errc::invalid_argument, "image dimensions must be positive");
    if (pixels.size() != static_cast<std::size_t>(h) * w * 3)
        throw Error(Errc::invalid_argument, "pixel buffer length does not match H*W*3");
}

Heatmap::Heatmap(int h, int w, double fill) : height(h), width(w) {
    if (h <= 0 || w <= 0) throw Error(Errc::invalid_argument, "heatmap dimensions must be positive");
    values.assign(static_cast<std::size_t>(h) * w, fill);
}

Heatmap::Heatmap(int h, int w, std::vector<double> data) : height(h), width(w), values(std::move(data)) {
    if (h <= 0 || w <= 0) throw Error(Errc::invalid_argument, "heatmap dimensions must be positive");
    if (values.size() != static_cast<std::size_t>(h) * w)
        throw Error(Errc::invalid_argument, "heatmap buffer length does not match H*W");
}

std::string_view to_string(ImageFormat format) noexcept { return format == ImageFormat::ppm ? "ppm" : "png"; }

std::optional<ImageFormat> parse_image_format(std::string_view name) noexcept {
    if (name == "ppm" || name == ".ppm") return ImageFormat::ppm;
    if (name == "png" || name == ".png") return ImageFormat::png;
    return std::nullopt;
}

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

// ---- PPM ----------------------------------------------------------------

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class PpmHeaderReader {
public:
    explicit PpmHeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (is_space(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    long read_uint(const char* what) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size()) throw DecodeError(pos_, std::string("PPM header truncated before ") + what);
        if (bytes_[pos_] < '0' || bytes_[pos_] > '9')
            throw DecodeError(pos_, std::string("PPM header: expected digits for ") + what);
        long v = 0;
        const auto start = pos_;
        while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > 1'000'000) throw DecodeError(start, std::string("PPM header: ") + what + " too large");
            ++pos_;
        }
        return v;
    }

    std::size_t pos() const { return pos_; }
    void advance() { ++pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

ImageU8 decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2) throw DecodeError(bytes.size(), "PPM: file too short for magic");
    if (bytes[0] != 'P' || bytes[1] != '6') throw DecodeError(0, "PPM: magic is not P6");
    PpmHeaderReader r(bytes.subspan(0));
    r.advance();
    r.advance();
    const auto width_at = r.pos();
    const long width = r.read_uint("width");
    const long height = r.read_uint("height");
    if (width <= 0 || height <= 0) throw DecodeError(width_at, "PPM: zero dimension");
    const auto maxval_at = r.pos();
    const long maxval = r.read_uint("maxval");
    if (maxval != 255) throw DecodeError(maxval_at, "PPM: unsupported maxval " + std::to_string(maxval));
    if (r.pos() >= bytes.size() || !is_space(bytes[r.pos()]))
        throw DecodeError(r.pos(), "PPM: expected single whitespace after maxval");
    const auto body = r.pos() + 1;
    const auto need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
    if (bytes.size() - body < need) throw DecodeError(bytes.size(), "PPM: truncated pixel data");
    std::vector<std::uint8_t> px(bytes.begin() + static_cast<long>(body),
                                 bytes.begin() + static_cast<long>(body + need));
    return ImageU8(static_cast<int>(height), static_cast<int>(width), std::move(px));
}

std::vector<std::uint8_t> encode_ppm(const ImageU8& image) {
    const std::string header =
        "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

// ---- PNG ----------------------------------------------------------------

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

ImageU8 decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) throw DecodeError(bytes.size(), "PNG: file too short for signature");
    if (std::memcmp(bytes.data(), kPngSignature, 8) != 0) throw DecodeError(0, "PNG: bad signature");

    std::size_t pos = 8;
    std::uint32_t width = 0, height = 0;
    int bit_depth = 0, color_type = -1;
    bool seen_ihdr = false, seen_iend = false;
    std::size_t idat_offset = 0;
    std::vector<std::uint8_t> idat;
    std::vector<Rgb> palette;

    while (!seen_iend) {
        if (bytes.size() - pos < 12) throw DecodeError(pos, "PNG: truncated chunk header");
        const std::uint32_t len = read_be32(bytes.data() + pos);
        const std::uint8_t* type = bytes.data() + pos + 4;
        if (len > 0x7fffffffu || bytes.size() - pos - 12 < len) throw DecodeError(pos, "PNG: truncated chunk");
        const std::uint8_t* data = type + 4;
        const std::uint32_t crc_stored = read_be32(data + len);
        const auto crc = static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), type, len + 4));
        if (crc != crc_stored) throw DecodeError(pos, "PNG: chunk CRC mismatch");
        const std::string tag(reinterpret_cast<const char*>(type), 4);

        if (!seen_ihdr && tag != "IHDR") throw DecodeError(pos, "PNG: first chunk is not IHDR");
        if (tag == "IHDR") {
            if (len != 13) throw DecodeError(pos, "PNG: IHDR has wrong length");
            width = read_be32(data);
            height = read_be32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            if (width == 0 || height == 0 || width > 100000 || height > 100000)
                throw DecodeError(pos + 8, "PNG: unsupported dimensions");
            if (data[10] != 0 || data[11] != 0) throw DecodeError(pos + 18, "PNG: unknown compression/filter method");
            if (data[12] != 0) throw DecodeError(pos + 20, "PNG: interlaced images are not supported");
            const bool ok = (color_type == 3 && bit_depth == 8) ||
                            ((color_type == 0 || color_type == 2 || color_type == 4 || color_type == 6) &&
                             (bit_depth == 8 || bit_depth == 16));
            if (!ok) throw DecodeError(pos + 16, "PNG: unsupported bit depth / color type");
            seen_ihdr = true;
        } else if (tag == "PLTE") {
            if (len % 3 != 0 || len == 0) throw DecodeError(pos, "PNG: malformed palette");
            for (std::uint32_t i = 0; i < len; i += 3) palette.push_back({data[i], data[i + 1], data[i + 2]});
        } else if (tag == "IDAT") {
            if (idat.empty()) idat_offset = pos;
            idat.insert(idat.end(), data, data + len);
        } else if (tag == "IEND") {
            seen_iend = true;
        } else if ((type[0] & 0x20) == 0) {
            throw DecodeError(pos, "PNG: unknown critical chunk " + tag);
        }
        pos += 12 + len;
    }
    if (idat.empty()) throw DecodeError(pos, "PNG: no image data");
    if (color_type == 3 && palette.empty()) throw DecodeError(pos, "PNG: palette image without PLTE");

    const int channels = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 3 ? 1 : color_type == 4 ? 2 : 4;
    const int bytes_per_sample = bit_depth / 8;
    const std::size_t bpp = static_cast<std::size_t>(channels * bytes_per_sample);
    const std::size_t stride = bpp * width;
    const std::size_t expected = (stride + 1) * height;

    std::vector<std::uint8_t> raw(expected);
    uLongf raw_len = static_cast<uLongf>(expected);
    const int zr = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zr != Z_OK) throw DecodeError(idat_offset, "PNG: corrupt or truncated compressed data");
    if (raw_len != expected) throw DecodeError(idat_offset, "PNG: decompressed data has wrong length");

    std::vector<std::uint8_t> prev(stride, 0), cur(stride);
    ImageU8 img(static_cast<int>(height), static_cast<int>(width));
    for (std::uint32_t y = 0; y < height; ++y) {
        const std::uint8_t* row = raw.data() + y * (stride + 1);
        const int filter = row[0];
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= bpp ? cur[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= bpp ? prev[i - bpp] : 0;
            const int x = row[1 + i];
            switch (filter) {
                case 0: cur[i] = static_cast<std::uint8_t>(x); break;
                case 1: cur[i] = static_cast<std::uint8_t>(x + a); break;
                case 2: cur[i] = static_cast<std::uint8_t>(x + b); break;
                case 3: cur[i] = static_cast<std::uint8_t>(x + (a + b) / 2); break;
                case 4: cur[i] = static_cast<std::uint8_t>(x + paeth(a, b, c)); break;
                default: throw DecodeError(idat_offset, "PNG: unknown row filter " + std::to_string(filter));
            }
        }
        for (std::uint32_t x = 0; x < width; ++x) {
            const std::uint8_t* s = cur.data() + x * bpp;
            auto sample = [&](int ch) { return s[ch * bytes_per_sample]; };  // high byte for 16-bit
            Rgb px{};
            switch (color_type) {
                case 0:
                case 4: px = {sample(0), sample(0), sample(0)}; break;
                case 2:
                case 6: px = {sample(0), sample(1), sample(2)}; break;
                case 3:
                    if (s[0] >= palette.size()) throw DecodeError(idat_offset, "PNG: palette index out of range");
                    px = palette[s[0]];
                    break;
                default: break;
            }
            for (int ch = 0; ch < 3; ++ch) img.at(static_cast<int>(y), static_cast<int>(x), ch) = px[ch];
        }
        std::swap(prev, cur);
    }
    return img;
}

void append_chunk(std::vector<std::uint8_t>& out, const char* tag, const std::vector<std::uint8_t>& data) {
    write_be32(out, static_cast<std::uint32_t>(data.size()));
    const auto start = out.size();
    out.insert(out.end(), tag, tag + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(crc32(0L, Z_NULL, 0), out.data() + start, static_cast<uInt>(out.size() - start));
    write_be32(out, static_cast<std::uint32_t>(crc));
}

std::vector<std::uint8_t> encode_png(const ImageU8& image) {
    std::vector<std::uint8_t> out(kPngSignature, kPngSignature + 8);
    std::vector<std::uint8_t> ihdr;
    write_be32(ihdr, static_cast<std::uint32_t>(image.width));
    write_be32(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
    append_chunk(out, "IHDR", ihdr);

    const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * image.height);
    for (int y = 0; y < image.height; ++y) {
        raw.push_back(0);
        const auto* row = image.pixels.data() + y * stride;
        raw.insert(raw.end(), row, row + stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(bound);
    if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error(Errc::io, "PNG: deflate failed");
    z.resize(bound);
    append_chunk(out, "IDAT", z);
    append_chunk(out, "IEND", {});
    return out;
}

}  // namespace

std::optional<ImageFormat> sniff_format(std::span<const std::uint8_t> bytes) noexcept {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) return ImageFormat::png;
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return ImageFormat::ppm;
    return std::nullopt;
}

ImageU8 decode(std::span<const std::uint8_t> bytes, ImageFormat format) {
    return format == ImageFormat::ppm ? decode_ppm(bytes) : decode_png(bytes);
}

ImageU8 decode_any(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw DecodeError(0, "empty image");
    const auto fmt = sniff_format(bytes);
    if (!fmt) throw Error(Errc::unsupported_format, "unsupported image format (expected PNG or binary PPM)");
    return decode(bytes, *fmt);
}

std::vector<std::uint8_t> encode(const ImageU8& image, ImageFormat format) {
    if (image.empty()) throw Error(Errc::invalid_argument, "cannot encode an empty image");
    return format == ImageFormat::ppm ? encode_ppm(image) : encode_png(image);
}

ImageU8 read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open image " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_any(bytes);
}

void write_image(const std::string& path, const ImageU8& image, ImageFormat format) {
    const auto bytes = encode(image, format);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write image " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io, "short write to " + path);
}

namespace {

struct Tap {
    int i0, i1;
    double frac;
};

std::vector<Tap> bilinear_taps(int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int d = 0; d < out; ++d) {
        double s = (d + 0.5) * scale - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(s));
        const int i1 = std::min(i0 + 1, in - 1);
        taps[d] = {i0, i1, s - i0};
    }
    return taps;
}

}  // namespace

ImageU8 resize_bilinear(const ImageU8& image, int out_height, int out_width) {
    if (out_height < 1 || out_width < 1) throw Error(Errc::invalid_argument, "resize: output dims must be >= 1");
    if (image.empty()) throw Error(Errc::invalid_argument, "resize: empty image");
    const auto ty = bilinear_taps(image.height, out_height);
    const auto tx = bilinear_taps(image.width, out_width);
    ImageU8 out(out_height, out_width);
    for (int y = 0; y < out_height; ++y) {
        const auto& vy = ty[y];
        for (int x = 0; x < out_width; ++x) {
            const auto& vx = tx[x];
            for (int c = 0; c < 3; ++c) {
                const double top = image.at(vy.i0, vx.i0, c) * (1.0 - vx.frac) + image.at(vy.i0, vx.i1, c) * vx.frac;
                const double bot = image.at(vy.i1, vx.i0, c) * (1.0 - vx.frac) + image.at(vy.i1, vx.i1, c) * vx.frac;
                out.at(y, x, c) = round_half_up_u8(top * (1.0 - vy.frac) + bot * vy.frac);
            }
        }
    }
    return out;
}

Heatmap resize_bilinear(const Heatmap& map, int out_height, int out_width) {
    if (out_height < 1 || out_width < 1) throw Error(Errc::invalid_argument, "resize: output dims must be >= 1");
    const auto ty = bilinear_taps(map.height, out_height);
    const auto tx = bilinear_taps(map.width, out_width);
    Heatmap out(out_height, out_width);
    for (int y = 0; y < out_height; ++y) {
        const auto& vy = ty[y];
        for (int x = 0; x < out_width; ++x) {
            const auto& vx = tx[x];
            const double top = map.at(vy.i0, vx.i0) * (1.0 - vx.frac) + map.at(vy.i0, vx.i1) * vx.frac;
            const double bot = map.at(vy.i1, vx.i0) * (1.0 - vx.frac) + map.at(vy.i1, vx.i1) * vx.frac;
            out.at(y, x) = top * (1.0 - vy.frac) + bot * vy.frac;
        }
    }
    return out;
}

ImageU8 crop(const ImageU8& image, const BBox& box) {
    const BBox r = clamp_to(box, image.width, image.height);
    if (!r.valid()) throw Error(Errc::invalid_argument, "crop: box is empty after clamping to the image");
    ImageU8 out(r.height(), r.width());
    const std::size_t row_bytes = static_cast<std::size_t>(r.width()) * 3;
    for (int y = 0; y < r.height(); ++y) {
        const auto* src = image.pixels.data() + (static_cast<std::size_t>(r.y0 + y) * image.width + r.x0) * 3;
        std::copy(src, src + row_bytes, out.pixels.data() + static_cast<std::size_t>(y) * row_bytes);
    }
    return out;
}

namespace {

void check_alpha(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(Errc::invalid_argument, "alpha must lie in [0, 1]");
}

std::uint8_t blend_channel(double weight, std::uint8_t overlay, std::uint8_t base) {
    return round_half_up_u8(weight * overlay + (1.0 - weight) * base);
}

}  // namespace

ImageU8 alpha_blend(const ImageU8& base, Rgb overlay_color, const Heatmap& mask, double alpha) {
    check_alpha(alpha);
    if (mask.height != base.height || mask.width != base.width)
        throw Error(Errc::invalid_argument, "alpha_blend: mask dims do not match the image");
    ImageU8 out = base;
    const std::size_t n = static_cast<std::size_t>(base.height) * base.width;
    for (std::size_t i = 0; i < n; ++i) {
        const double m = mask.values[i];
        if (!(m > 0.0)) continue;
        const double w = alpha * std::min(m, 1.0);
        for (int c = 0; c < 3; ++c) out.pixels[i * 3 + c] = blend_channel(w, overlay_color[c], base.pixels[i * 3 + c]);
    }
    return out;
}

ImageU8 alpha_blend(const ImageU8& base, const ImageU8& overlay, double alpha) {
    check_alpha(alpha);
    if (overlay.height != base.height || overlay.width != base.width)
        throw Error(Errc::invalid_argument, "alpha_blend: overlay dims do not match the image");
    ImageU8 out = base;
    for (std::size_t i = 0; i < base.pixels.size(); ++i)
        out.pixels[i] = blend_channel(alpha, overlay.pixels[i], base.pixels[i]);
    return out;
}

Rgb colormap(double heat) noexcept {
    static constexpr double stops[4][3] = {{0, 0, 255}, {0, 255, 255}, {255, 255, 0}, {255, 0, 0}};
    double v = std::isfinite(heat) ? std::clamp(heat, 0.0, 1.0) : 0.0;
    const double scaled = v * 3.0;
    const int seg = std::min(static_cast<int>(std::floor(scaled)), 2);
    const double t = scaled - seg;
    Rgb out{};
    for (int c = 0; c < 3; ++c) out[c] = round_half_up_u8(stops[seg][c] + (stops[seg + 1][c] - stops[seg][c]) * t);
    return out;
}

ImageU8 colormap(const Heatmap& heat) {
    ImageU8 out(heat.height, heat.width);
    for (std::size_t i = 0; i < heat.values.size(); ++i) {
        const auto px = colormap(heat.values[i]);
        std::copy(px.begin(), px.end(), out.pixels.begin() + static_cast<long>(i * 3));
    }
    return out;
}

}  // namespace ensel
