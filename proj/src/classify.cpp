#include "ensel/classify.hpp"

#include "ensel/error.hpp"

#include <set>

namespace ensel {

ClassifierModel::ClassifierModel(Network network, std::vector<std::string> class_labels, ModelMetadata metadata)
    : net(std::move(network)), labels(std::move(class_labels)), meta(std::move(metadata)) {
    if (labels.size() < 2) throw Error(Errc::invalid_argument, "classifier needs at least 2 class labels");
    if (std::set<std::string>(labels.begin(), labels.end()).size() != labels.size())
        throw Error(Errc::invalid_argument, "classifier labels must be unique");
    if (net.architecture() != classifier_architecture(labels.size()))
        throw Error(Errc::shape_mismatch, "network is not the frozen classifier architecture for " +
                                              std::to_string(labels.size()) + " classes");
}

ClassifierModel init_classifier(std::vector<std::string> labels, std::uint64_t seed, ModelMetadata meta) {
    auto net = init_network(classifier_architecture(labels.size()), seed);
    return ClassifierModel(std::move(net), std::move(labels), std::move(meta));
}

std::vector<double> classifier_logits(const ClassifierModel& model, const ImageU8& input) {
    if (input.height != kClassifierInput || input.width != kClassifierInput)
        throw Error(Errc::invalid_shape, "classifier input must be 64x64, got " + std::to_string(input.height) + "x" +
                                             std::to_string(input.width));
    const auto pass = network_forward(model.net, image_to_tensor(input));
    return pass.output.values();
}

ClassDistribution classify(const ClassifierModel& model, const ImageU8& input) {
    const auto logits = classifier_logits(model, input);
    return ClassDistribution(model.labels, softmax(logits));
}

}  // namespace ensel
