#pragma once

#include <optional>
#include <string>

namespace ensel {

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct BBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;
    double score = 1.0;
    std::optional<std::string> label;

    int width() const noexcept { return x1 - x0; }
    int height() const noexcept { return y1 - y0; }
    long area() const noexcept { return valid() ? static_cast<long>(width()) * height() : 0; }
    bool valid() const noexcept { return x0 < x1 && y0 < y1; }
    bool contains(double x, double y) const noexcept { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool same_rect(const BBox& o) const noexcept { return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1; }

    friend bool operator==(const BBox&, const BBox&) = default;
};

// Intersection with [0, width) x [0, height); may come back invalid (empty).
inline BBox clamp_to(const BBox& box, int width, int height) noexcept {
    BBox r = box;
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    r.x0 = clampi(box.x0, 0, width);
    r.x1 = clampi(box.x1, 0, width);
    r.y0 = clampi(box.y0, 0, height);
    r.y1 = clampi(box.y1, 0, height);
    return r;
}

}  // namespace ensel
