#pragma once

// Model registry loaded from <dir>/manifest.json:
//
//   {"models": [{"id": "M2", "file": "m2.ensl", "role": "classifier",
//                "training_phase": "3rd", "class_count": 4}, ...]}
//
// Registry fields may also be nested under "metadata". Every referenced file
// is loaded (and therefore checksum-verified) at registry load time.

#include "ensel/classify.hpp"
#include "ensel/detect.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace ensel {

struct RegistryEntry {
    std::string id;
    std::string file;  // absolute or manifest-relative path as given
    ModelRole role = ModelRole::classifier;
    std::string training_phase;
    std::size_t class_count = 0;
    std::shared_ptr<const ClassifierModel> classifier;
    std::shared_ptr<const DetectorModel> detector;
};

class ModelRegistry {
public:
    ModelRegistry() = default;

    // Throws Errc::duplicate_id.
    void add(RegistryEntry entry);

    bool contains(const std::string& id) const noexcept { return entries_.count(id) != 0; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    // Throws Errc::unknown_id or Errc::role_mismatch.
    const RegistryEntry& entry(const std::string& id) const;
    const ClassifierModel& classifier(const std::string& id) const;
    const DetectorModel& detector(const std::string& id) const;

    std::vector<std::string> ids() const;
    const std::map<std::string, RegistryEntry>& entries() const noexcept { return entries_; }

private:
    std::map<std::string, RegistryEntry> entries_;
};

ModelRegistry registry_load(const std::string& dir);

struct ManifestEntry {
    std::string id;
    std::string file;
    ModelRole role = ModelRole::classifier;
    std::string training_phase;
    std::size_t class_count = 0;
};

void write_manifest(const std::string& dir, const std::vector<ManifestEntry>& entries);

}  // namespace ensel
