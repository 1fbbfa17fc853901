#pragma once

// Synthetic skin-lesion dataset and the desk-scale SGD trainers for the
// detector and classifiers, with loss curves and early stopping.

#include "ensel/classify.hpp"
#include "ensel/detect.hpp"
#include "ensel/imaging.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ensel {

inline const std::vector<std::string> kSyntheticLabels = {"atopic_dermatitis", "psoriasis", "nevus", "healthy"};
inline constexpr const char* kHealthyLabel = "healthy";

struct SyntheticDatasetSpec {
    int height = 96;
    int width = 96;
    std::vector<std::string> classes = kSyntheticLabels;
    int per_class = 10;
    int min_axis = 10;  // lesion semi-axes in pixels
    int max_axis = 30;
    Rgb base_tone = {210, 170, 150};
    // Per-sample noise amplitude drawn uniformly from [noise_min, noise_max];
    // every channel of every pixel then gets a uniform integer offset in
    // [-amplitude, amplitude].
    int noise_min = 20;
    int noise_max = 20;
};

struct LabeledSample {
    ImageU8 image;
    std::string label;
    std::optional<BBox> box;  // absent for healthy skin
    int noise = 0;
};

void validate(const SyntheticDatasetSpec& spec);

// Samples are interleaved by class (sample i has class i mod C) and drawn
// from a single SplitMix64 stream seeded with `seed`.
std::vector<LabeledSample> generate_synthetic(const SyntheticDatasetSpec& spec, std::uint64_t seed);

// <dir>/sample_00000.ppm ... plus manifest.json {samples: [{file, label, box, noise}]}.
void write_dataset(const std::string& dir, const std::vector<LabeledSample>& samples);
std::vector<LabeledSample> read_dataset(const std::string& dir);

struct TrainConfig {
    double learning_rate = 0.05;
    int epochs = 30;
    int batch_size = 16;
    int patience = 5;
    std::uint64_t seed = 1;
    std::array<double, 3> split = {0.7, 0.2, 0.1};  // train / validation / test
    // Classifier head labels; empty means the sorted labels of the training set.
    std::vector<std::string> labels;
};

void validate(const TrainConfig& config);

struct DatasetSplit {
    std::vector<LabeledSample> train;
    std::vector<LabeledSample> validation;
    std::vector<LabeledSample> test;
};

// Stratified by label; label groups are processed in sorted order and each
// group is shuffled with the seed before slicing.
DatasetSplit split_dataset(const std::vector<LabeledSample>& samples, const std::array<double, 3>& ratios,
                           std::uint64_t seed);

struct LossCurve {
    std::vector<double> train_loss;
    std::vector<double> val_loss;

    std::size_t epochs() const noexcept { return train_loss.size(); }
    std::string csv() const;  // epoch,train_loss,val_loss with 1-based epochs
};

struct EarlyStop {
    std::size_t best_epoch = 0;  // 1-based
    std::size_t stop_epoch = 0;  // 1-based
};

EarlyStop early_stopping(const std::vector<double>& val_losses, int patience);

struct ClassifierTraining {
    ClassifierModel model;
    LossCurve curve;
    EarlyStop stop;
};

struct DetectorTraining {
    DetectorModel model;
    LossCurve curve;
    EarlyStop stop;
};

// Sorted unique labels of the samples.
std::vector<std::string> dataset_labels(const std::vector<LabeledSample>& samples);

// Training views of one sample at classifier resolution: the whole image and
// the lesion crop (a random skin patch for unboxed samples).
std::vector<ImageU8> classifier_views(const LabeledSample& sample, SplitMix64& rng);

// Mean cross-entropy of the model over the classifier views of the samples.
double classifier_loss(const ClassifierModel& model, const std::vector<LabeledSample>& samples, std::uint64_t seed);

// Throws TrainingError on a non-finite loss. An empty validation set falls
// back to validating on the training set.
ClassifierTraining train_classifier(const std::vector<LabeledSample>& train, const std::vector<LabeledSample>& validation,
                                    const TrainConfig& config, ModelMetadata meta = {});
ClassifierTraining train_classifier(const std::vector<LabeledSample>& dataset, const TrainConfig& config,
                                    ModelMetadata meta = {});

// 1 x 32 x 32 objectness targets: a cell is positive when its centre, mapped
// back to image coordinates, lies inside the box.
Tensor detector_targets(const std::optional<BBox>& box, int image_height, int image_width);

double detector_loss(const DetectorModel& model, const std::vector<LabeledSample>& samples);

DetectorTraining train_detector(const std::vector<LabeledSample>& train, const std::vector<LabeledSample>& validation,
                                const TrainConfig& config, ModelMetadata meta = {});
DetectorTraining train_detector(const std::vector<LabeledSample>& dataset, const TrainConfig& config,
                                ModelMetadata meta = {});

}  // namespace ensel
