#pragma once

#include <string>

namespace ensel {

enum class ModelRole { detector, classifier };

std::string to_string(ModelRole role);
ModelRole parse_role(const std::string& text);

// Registry-facing metadata; mirrors the training-phase / version / class
// count inventory of the deployed models.
struct ModelMetadata {
    std::string id;
    std::string training_phase;
    std::string created_at;
    std::string version;

    friend bool operator==(const ModelMetadata&, const ModelMetadata&) = default;
};

}  // namespace ensel
