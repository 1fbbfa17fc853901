#include "ensel/detect.hpp"

#include "ensel/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace ensel {

std::string to_string(ModelRole role) { return role == ModelRole::detector ? "detector" : "classifier"; }

ModelRole parse_role(const std::string& text) {
    if (text == "detector") return ModelRole::detector;
    if (text == "classifier") return ModelRole::classifier;
    throw Error(Errc::metadata, "unknown model role '" + text + "'");
}

DetectorModel::DetectorModel() : net(detector_architecture()) {}

DetectorModel::DetectorModel(Network network, ModelMetadata metadata)
    : net(std::move(network)), meta(std::move(metadata)) {
    if (net.architecture() != detector_architecture())
        throw Error(Errc::shape_mismatch, "network is not the frozen detector architecture");
}

Tensor image_to_tensor(const ImageU8& image) {
    const auto h = static_cast<std::size_t>(image.height), w = static_cast<std::size_t>(image.width);
    Tensor t({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = image.pixels[(y * w + x) * 3 + c] / 255.0;
    return t;
}

ObjectnessMap objectness(const DetectorModel& model, const ImageU8& image) {
    const ImageU8 resized = resize_bilinear(image, kDetectorInput, kDetectorInput);
    const auto pass = network_forward(model.net, image_to_tensor(resized));
    ObjectnessMap map;
    map.height = static_cast<int>(pass.output.dim(1));
    map.width = static_cast<int>(pass.output.dim(2));
    map.stride = kDetectorInput / map.width;
    map.values.resize(pass.output.size());
    for (std::size_t i = 0; i < pass.output.size(); ++i) map.values[i] = sigmoid(pass.output[i]);
    return map;
}

BinaryMask threshold_map(const ObjectnessMap& map, double threshold) {
    BinaryMask mask{map.height, map.width, std::vector<std::uint8_t>(map.values.size())};
    for (std::size_t i = 0; i < map.values.size(); ++i) mask.bits[i] = map.values[i] > threshold ? 1 : 0;
    return mask;
}

std::vector<std::vector<Cell>> connected_components(const BinaryMask& mask) {
    std::vector<std::vector<Cell>> components;
    std::vector<std::uint8_t> seen(mask.bits.size(), 0);
    std::deque<Cell> queue;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const auto idx = static_cast<std::size_t>(y) * mask.width + x;
            if (!mask.bits[idx] || seen[idx]) continue;
            std::vector<Cell> comp;
            seen[idx] = 1;
            queue.push_back({y, x});
            while (!queue.empty()) {
                const Cell c = queue.front();
                queue.pop_front();
                comp.push_back(c);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = c.y + dy, nx = c.x + dx;
                        if ((dy == 0 && dx == 0) || ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width)
                            continue;
                        const auto n = static_cast<std::size_t>(ny) * mask.width + nx;
                        if (mask.bits[n] && !seen[n]) {
                            seen[n] = 1;
                            queue.push_back({ny, nx});
                        }
                    }
                }
            }
            std::sort(comp.begin(), comp.end(), [](const Cell& a, const Cell& b) {
                return a.y != b.y ? a.y < b.y : a.x < b.x;
            });
            components.push_back(std::move(comp));
        }
    }
    return components;
}

namespace {

// round_half_up(numerator / denominator) for non-negative integers.
int ratio_round(long numerator, long denominator) {
    return static_cast<int>((2 * numerator + denominator) / (2 * denominator));
}

}  // namespace

std::vector<BBox> boxes_from_objectness(const ObjectnessMap& map, int image_height, int image_width,
                                        double threshold, int min_area_px, int detector_input) {
    if (image_height <= 0 || image_width <= 0) throw Error(Errc::invalid_argument, "image must be nonempty");
    std::vector<BBox> boxes;
    for (const auto& comp : connected_components(threshold_map(map, threshold))) {
        int cx0 = map.width, cy0 = map.height, cx1 = 0, cy1 = 0;
        double sum = 0.0;
        for (const auto& c : comp) {
            cx0 = std::min(cx0, c.x);
            cy0 = std::min(cy0, c.y);
            cx1 = std::max(cx1, c.x + 1);
            cy1 = std::max(cy1, c.y + 1);
            sum += map.at(c.y, c.x);
        }
        BBox b;
        b.x0 = ratio_round(static_cast<long>(cx0) * map.stride * image_width, detector_input);
        b.x1 = ratio_round(static_cast<long>(cx1) * map.stride * image_width, detector_input);
        b.y0 = ratio_round(static_cast<long>(cy0) * map.stride * image_height, detector_input);
        b.y1 = ratio_round(static_cast<long>(cy1) * map.stride * image_height, detector_input);
        b = clamp_to(b, image_width, image_height);
        if (!b.valid() || b.area() < min_area_px) continue;
        b.score = sum / static_cast<double>(comp.size());
        boxes.push_back(b);
    }
    std::sort(boxes.begin(), boxes.end(), [](const BBox& a, const BBox& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.y0 != b.y0) return a.y0 < b.y0;
        return a.x0 < b.x0;
    });
    return boxes;
}

Localization locate_lesions(const ImageU8& image, const DetectorModel& model, double threshold, int min_area_px) {
    if (image.empty()) throw Error(Errc::invalid_argument, "detect: empty image");
    if (!(threshold > 0.0 && threshold < 1.0)) throw Error(Errc::invalid_argument, "detect: threshold must be in (0,1)");
    Localization loc;
    loc.objectness = objectness(model, image);
    loc.boxes = boxes_from_objectness(loc.objectness, image.height, image.width, threshold, min_area_px);
    return loc;
}

std::vector<BBox> detect_lesions(const ImageU8& image, const DetectorModel& model, double threshold,
                                 int min_area_px) {
    return locate_lesions(image, model, threshold, min_area_px).boxes;
}

Heatmap lesion_mask(const ObjectnessMap& map, double threshold, int image_height, int image_width) {
    Heatmap mask(image_height, image_width);
    std::vector<int> mx(static_cast<std::size_t>(image_width));
    for (int x = 0; x < image_width; ++x)
        mx[x] = std::min(map.width - 1, static_cast<int>(std::floor((x + 0.5) * map.width / image_width)));
    for (int y = 0; y < image_height; ++y) {
        const int my = std::min(map.height - 1, static_cast<int>(std::floor((y + 0.5) * map.height / image_height)));
        for (int x = 0; x < image_width; ++x) mask.at(y, x) = map.at(my, mx[x]) > threshold ? 1.0 : 0.0;
    }
    return mask;
}

double iou(const BBox& a, const BBox& b) noexcept {
    const long ix = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const long iy = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const long inter = ix * iy;
    const long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double smooth_l1(double x, double delta) noexcept {
    const double ax = std::abs(x);
    return ax < delta ? 0.5 * x * x / delta : ax - 0.5 * delta;
}

double box_regression_loss(const BBox& pred, const BBox& truth, int image_width, int image_height, double delta) {
    const double w = image_width, h = image_height;
    const double diffs[4] = {(pred.x0 - truth.x0) / w, (pred.y0 - truth.y0) / h, (pred.x1 - truth.x1) / w,
                             (pred.y1 - truth.y1) / h};
    double sum = 0.0;
    for (double d : diffs) sum += smooth_l1(d, delta);
    return sum / 4.0;
}

ImageU8 rescale_crop(const ImageU8& image, const BBox& box, int target_height, int target_width) {
    const ImageU8 patch = crop(image, box);
    if (patch.height == target_height && patch.width == target_width) return patch;
    return resize_bilinear(patch, target_height, target_width);
}

}  // namespace ensel
