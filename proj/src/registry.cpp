#include "ensel/registry.hpp"

#include "ensel/error.hpp"
#include "ensel/model_io.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

namespace ensel {

namespace fs = std::filesystem;
using nlohmann::json;

void ModelRegistry::add(RegistryEntry entry) {
    if (entries_.count(entry.id)) throw Error(Errc::duplicate_id, "duplicate model id '" + entry.id + "'");
    auto id = entry.id;
    entries_.emplace(std::move(id), std::move(entry));
}

const RegistryEntry& ModelRegistry::entry(const std::string& id) const {
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw Error(Errc::unknown_id, "no model with id '" + id + "' in registry");
    return it->second;
}

const ClassifierModel& ModelRegistry::classifier(const std::string& id) const {
    const auto& e = entry(id);
    if (e.role != ModelRole::classifier || !e.classifier)
        throw Error(Errc::role_mismatch, "model '" + id + "' is not a classifier");
    return *e.classifier;
}

const DetectorModel& ModelRegistry::detector(const std::string& id) const {
    const auto& e = entry(id);
    if (e.role != ModelRole::detector || !e.detector)
        throw Error(Errc::role_mismatch, "model '" + id + "' is not a detector");
    return *e.detector;
}

std::vector<std::string> ModelRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : entries_) out.push_back(id);
    return out;
}

ModelRegistry registry_load(const std::string& dir) {
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw Error(Errc::missing_file, "registry manifest not found: " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(Errc::metadata, "registry manifest is not valid JSON: " + std::string(e.what()));
    }

    ModelRegistry registry;
    const json models = manifest.value("models", json::array());
    if (!models.is_array()) throw Error(Errc::metadata, "registry manifest 'models' must be an array");
    for (const auto& m : models) {
        RegistryEntry e;
        try {
            const json& meta = m.contains("metadata") ? m.at("metadata") : m;
            e.id = m.at("id").get<std::string>();
            e.file = m.at("file").get<std::string>();
            e.role = parse_role(m.at("role").get<std::string>());
            e.training_phase = meta.value("training_phase", "");
            e.class_count = meta.value("class_count", std::size_t{0});
        } catch (const json::exception& ex) {
            throw Error(Errc::metadata, "bad registry entry: " + std::string(ex.what()));
        }
        if (registry.contains(e.id)) throw Error(Errc::duplicate_id, "duplicate model id '" + e.id + "'");
        fs::path file = e.file;
        if (file.is_relative()) file = fs::path(dir) / file;
        if (!fs::exists(file)) throw Error(Errc::missing_file, "model file missing for '" + e.id + "': " + file.string());

        auto loaded = load_model(file.string());
        if (loaded.role != e.role)
            throw Error(Errc::role_mismatch, "model '" + e.id + "' is declared " + to_string(e.role) + " but file is " +
                                                 to_string(loaded.role));
        if (e.role == ModelRole::classifier) {
            if (e.class_count != 0 && e.class_count != loaded.labels.size())
                throw Error(Errc::metadata, "model '" + e.id + "' class_count disagrees with the file");
            e.class_count = loaded.labels.size();
            e.classifier = std::make_shared<const ClassifierModel>(std::move(loaded.net), std::move(loaded.labels),
                                                                   std::move(loaded.meta));
        } else {
            e.detector = std::make_shared<const DetectorModel>(std::move(loaded.net), std::move(loaded.meta));
        }
        registry.add(std::move(e));
    }
    return registry;
}

void write_manifest(const std::string& dir, const std::vector<ManifestEntry>& entries) {
    json models = json::array();
    for (const auto& e : entries) {
        models.push_back({{"id", e.id},
                          {"file", e.file},
                          {"role", to_string(e.role)},
                          {"training_phase", e.training_phase},
                          {"class_count", e.class_count}});
    }
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write manifest in " + dir);
    out << json{{"models", models}}.dump(2) << '\n';
}

}  // namespace ensel
