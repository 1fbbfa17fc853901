#pragma once

// Pinned training fixture shared by the integration and acceptance tests:
// a 400-image training set, a 110-image test set, one detector (D1), a
// reference classifier (REF) and two complementary classifiers trained on
// the low-noise (M2) and high-noise (M8) halves of the training set.

#include "ensel/registry.hpp"
#include "ensel/train.hpp"

#include <cstdint>
#include <string>

namespace fixture {

inline constexpr std::uint64_t kTrainSeed = 2024;
inline constexpr std::uint64_t kTestSeed = 2025;
inline constexpr std::uint64_t kCamSeed = 2026;
inline constexpr std::uint64_t kSplitSeed = 1;
inline constexpr std::uint64_t kDetectorSeed = 1;
inline constexpr std::uint64_t kReferenceSeed = 1;
inline constexpr std::uint64_t kLowNoiseSeed = 11;
inline constexpr std::uint64_t kHighNoiseSeed = 12;
inline constexpr int kNoiseMin = 5;
inline constexpr int kNoiseMax = 80;
inline constexpr int kTrainPerClass = 100;
inline constexpr std::size_t kTestCount = 110;
inline constexpr std::size_t kCamCount = 50;

std::string root();
std::string models_dir();
std::string train_dir();
std::string test_dir();
std::string ensemble_config();       // M2 + M8 with D1
std::string reference_config();      // REF with D1
std::string build_info();            // JSON with timings of the build

ensel::SyntheticDatasetSpec spec(int per_class);
ensel::TrainConfig detector_config();
ensel::TrainConfig classifier_config(std::uint64_t seed);

// Splits a dataset at the median noise amplitude (ties go low).
void split_by_noise(const std::vector<ensel::LabeledSample>& samples, std::vector<ensel::LabeledSample>& low,
                    std::vector<ensel::LabeledSample>& high);

// Lesion-bearing samples used for the Grad-CAM localisation check.
std::vector<ensel::LabeledSample> cam_set();

// Builds everything under root() unless the completion stamp exists.
// Returns true when a build happened.
bool ensure_built();

}  // namespace fixture
