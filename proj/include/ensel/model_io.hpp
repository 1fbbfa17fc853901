#pragma once

// Binary model file, little-endian throughout:
//
//   "ENSL" | u32 version (=1) | u32 metadata length | metadata JSON (UTF-8)
//   | f64 weights in the tensor order declared by the metadata
//   | u32 CRC-32 of the weight bytes
//
// Metadata carries the architecture name, role, input size, class labels,
// the declared tensor order with shapes, and the registry fields.

#include "ensel/classify.hpp"
#include "ensel/detect.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace ensel {

inline constexpr std::uint32_t kModelFormatVersion = 1;

struct ModelFile {
    ModelRole role = ModelRole::classifier;
    ModelMetadata meta;
    std::vector<std::string> labels;  // classifiers only
    Network net;
};

std::vector<std::uint8_t> serialize_model(const ModelFile& model);
// Throws Error with Errc::bad_magic, bad_version, truncated, metadata,
// shape_mismatch or checksum.
ModelFile parse_model(std::span<const std::uint8_t> bytes);

ModelFile to_model_file(const ClassifierModel& model);
ModelFile to_model_file(const DetectorModel& model);

void save_model(const ClassifierModel& model, const std::string& path);
void save_model(const DetectorModel& model, const std::string& path);

ModelFile load_model(const std::string& path);
ClassifierModel load_classifier(const std::string& path);
DetectorModel load_detector(const std::string& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) noexcept;

}  // namespace ensel
