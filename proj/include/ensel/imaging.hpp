#pragma once

// Raster ingestion and the visualization primitives: PPM/PNG codecs,
// pixel-center bilinear resize, crop, alpha blending and the 4-stop
// heat colormap. Rounding is half-up everywhere.

#include "ensel/bbox.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ensel {

using Rgb = std::array<std::uint8_t, 3>;

struct ImageU8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // H x W x 3, RGB

    ImageU8() = default;
    ImageU8(int h, int w, Rgb fill = {0, 0, 0});
    ImageU8(int h, int w, std::vector<std::uint8_t> data);

    std::uint8_t& at(int y, int x, int c) noexcept { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const noexcept {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    Rgb pixel(int y, int x) const noexcept { return {at(y, x, 0), at(y, x, 1), at(y, x, 2)}; }
    bool empty() const noexcept { return pixels.empty(); }

    friend bool operator==(const ImageU8&, const ImageU8&) = default;
};

// Values in [0, 1]; also used for binary masks (0 or 1).
struct Heatmap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    Heatmap() = default;
    Heatmap(int h, int w, double fill = 0.0);
    Heatmap(int h, int w, std::vector<double> data);

    double& at(int y, int x) noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const Heatmap&, const Heatmap&) = default;
};

enum class ImageFormat { ppm, png };

std::string_view to_string(ImageFormat format) noexcept;
std::optional<ImageFormat> parse_image_format(std::string_view name) noexcept;

// Identifies a supported container from its leading bytes.
std::optional<ImageFormat> sniff_format(std::span<const std::uint8_t> bytes) noexcept;

// Throws DecodeError (with byte offset) on malformed input.
ImageU8 decode(std::span<const std::uint8_t> bytes, ImageFormat format);
// Sniffs the format first; throws Error(unsupported_format) if unrecognized.
ImageU8 decode_any(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode(const ImageU8& image, ImageFormat format);

ImageU8 read_image(const std::string& path);
void write_image(const std::string& path, const ImageU8& image, ImageFormat format);

inline std::uint8_t round_half_up_u8(double v) noexcept {
    const double r = v + 0.5;
    if (!(r >= 0.0)) return 0;
    if (r >= 255.0) return 255;
    return static_cast<std::uint8_t>(r);
}

// Pixel-center mapping src = (dst + 0.5) * (in / out) - 0.5, clamped to
// [0, in - 1], separable bilinear weights.
ImageU8 resize_bilinear(const ImageU8& image, int out_height, int out_width);
Heatmap resize_bilinear(const Heatmap& map, int out_height, int out_width);

// The box is clamped to the image; an empty result throws invalid_argument.
ImageU8 crop(const ImageU8& image, const BBox& box);

// out = round(a*m*overlay + (1 - a*m)*base) where m > 0, base elsewhere.
ImageU8 alpha_blend(const ImageU8& base, Rgb overlay_color, const Heatmap& mask, double alpha);
// Same rule with a per-pixel overlay and m = 1 everywhere.
ImageU8 alpha_blend(const ImageU8& base, const ImageU8& overlay, double alpha);

// 0 -> blue, 1/3 -> cyan, 2/3 -> yellow, 1 -> red, linear in between.
Rgb colormap(double heat) noexcept;
ImageU8 colormap(const Heatmap& heat);

}  // namespace ensel
