#pragma once

#include "ensel/detect.hpp"
#include "ensel/distribution.hpp"
#include "ensel/imaging.hpp"
#include "ensel/model_meta.hpp"
#include "ensel/network.hpp"

#include <string>
#include <vector>

namespace ensel {

struct ClassifierModel {
    Network net;
    std::vector<std::string> labels;
    ModelMetadata meta;

    ClassifierModel() = default;
    // Checks: >= 2 unique labels, network is the frozen classifier with a
    // matching head.
    ClassifierModel(Network network, std::vector<std::string> class_labels, ModelMetadata metadata);

    std::size_t class_count() const noexcept { return labels.size(); }
};

ClassifierModel init_classifier(std::vector<std::string> labels, std::uint64_t seed, ModelMetadata meta = {});

// Input must be exactly 64x64 (callers rescale); pixels are scaled by 1/255.
ClassDistribution classify(const ClassifierModel& model, const ImageU8& input);
std::vector<double> classifier_logits(const ClassifierModel& model, const ImageU8& input);

}  // namespace ensel
