#pragma once

// Grad-CAM heatmaps for classifier decisions and the two user-facing
// overlays (CAM colormap and lesion segmentation).

#include "ensel/classify.hpp"
#include "ensel/imaging.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ensel {

struct CamResult {
    Heatmap raw;       // one value per cell of the feature map, before normalisation
    Heatmap heatmap;   // normalised by max and upsampled to the network input
    std::size_t target_class = 0;
    std::string target_label;
    std::string model_id;
};

// Grad-CAM on an arbitrary layer of a network whose output is a vector of
// logits. `layer` indexes the layer whose output is used as A^k.
CamResult grad_cam_layer(const Network& net, const Tensor& input, std::size_t target, std::size_t layer);

// Input must be 64x64. Throws invalid_argument on an unknown class.
CamResult grad_cam(const ClassifierModel& model, const ImageU8& input, std::size_t target_class);
CamResult grad_cam(const ClassifierModel& model, const ImageU8& input, const std::string& target_label);

// Colormapped heatmap blended onto the image; the heatmap is resized to the
// image when their sizes differ.
ImageU8 cam_overlay(const ImageU8& image, const CamResult& cam, double alpha);

ImageU8 segmentation_overlay(const ImageU8& image, const Heatmap& mask, Rgb color, double alpha);

std::vector<CamResult> cam_compare(std::span<const ClassifierModel* const> models, const ImageU8& input,
                                   const std::string& target_label);

// Full-resolution explanation image: the CAM is computed on the classifier
// view of `region` (or of the whole image when absent) and painted back
// through the crop geometry; pixels outside the region are left untouched.
ImageU8 explain_overlay(const ImageU8& image, const ClassifierModel& model, const std::string& target_label,
                        const std::optional<BBox>& region, double alpha);

}  // namespace ensel
