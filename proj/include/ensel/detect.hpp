#pragma once

// Lesion localization: a tiny objectness CNN over a 128x128 resize of the
// input, thresholding, 8-connected components and tight boxes mapped back to
// original pixel coordinates. Also the box metrics used in training.

#include "ensel/bbox.hpp"
#include "ensel/imaging.hpp"
#include "ensel/model_meta.hpp"
#include "ensel/network.hpp"

#include <vector>

namespace ensel {

inline constexpr int kDetectorInput = 128;
inline constexpr int kObjectnessSize = 32;
inline constexpr int kObjectnessStride = 4;
inline constexpr double kDefaultDetectThreshold = 0.5;
inline constexpr int kDefaultMinArea = 16;
inline constexpr double kSmoothL1Delta = 0.1;

struct ObjectnessMap {
    int height = 0;
    int width = 0;
    int stride = kObjectnessStride;  // map cell -> detector-input pixels
    std::vector<double> values;      // in [0, 1]

    double at(int y, int x) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct DetectorModel {
    Network net;
    ModelMetadata meta;

    DetectorModel();
    DetectorModel(Network network, ModelMetadata metadata);
};

// Input normalisation shared by training and inference: value / 255, C x H x W.
Tensor image_to_tensor(const ImageU8& image);

ObjectnessMap objectness(const DetectorModel& model, const ImageU8& image);

struct Cell {
    int y = 0;
    int x = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    bool at(int y, int x) const noexcept { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
};

BinaryMask threshold_map(const ObjectnessMap& map, double threshold);

// 8-connectivity. Components are ordered by their first pixel in row-major
// order; the cells of each component are listed in row-major order.
std::vector<std::vector<Cell>> connected_components(const BinaryMask& mask);

// Everything after the CNN: threshold, components, tight boxes scaled from
// map cells through the stride and the resize ratio (rounded half-up),
// min-area filter, score = mean objectness, sort by score desc then (y0, x0).
std::vector<BBox> boxes_from_objectness(const ObjectnessMap& map, int image_height, int image_width,
                                        double threshold, int min_area_px, int detector_input = kDetectorInput);

struct Localization {
    std::vector<BBox> boxes;
    ObjectnessMap objectness;
};

Localization locate_lesions(const ImageU8& image, const DetectorModel& model,
                            double threshold = kDefaultDetectThreshold, int min_area_px = kDefaultMinArea);

std::vector<BBox> detect_lesions(const ImageU8& image, const DetectorModel& model,
                                 double threshold = kDefaultDetectThreshold, int min_area_px = kDefaultMinArea);

// Thresholded objectness upsampled (nearest, pixel centers) to the image size.
Heatmap lesion_mask(const ObjectnessMap& map, double threshold, int image_height, int image_width);

double iou(const BBox& a, const BBox& b) noexcept;

// Mean smooth-L1 over (x0, y0, x1, y1) after normalising x by the image
// width and y by the image height.
double box_regression_loss(const BBox& pred, const BBox& truth, int image_width, int image_height,
                           double delta = kSmoothL1Delta);
double smooth_l1(double x, double delta = kSmoothL1Delta) noexcept;

inline constexpr int kClassifierInput = 64;

ImageU8 rescale_crop(const ImageU8& image, const BBox& box, int target_height = kClassifierInput,
                     int target_width = kClassifierInput);

}  // namespace ensel
