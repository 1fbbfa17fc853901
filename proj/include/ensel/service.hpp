#pragma once

// Diagnosis service: request handling core (transport-independent) and an
// HTTP front end.
//
//   POST /api/diagnose           multipart field "image" (or a raw body), ?config=ID
//   GET  /api/results/{id}       stored diagnosis without the overlay
//   GET  /api/explain/{id}?model=M  Grad-CAM overlay PNG for the final class
//   GET  /api/models             registry listing
//   GET  /api/health             {"status":"ok","models_loaded":n}
//   /                            static files
//
// Records are appended to <data_dir>/records.jsonl; input and overlay images
// are stored as PNG under <data_dir>/images.

#include "ensel/ensemble.hpp"
#include "ensel/registry.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace ensel {

inline constexpr std::size_t kDefaultUploadLimit = 32u * 1024u * 1024u;
inline constexpr int kDefaultPort = 8080;

struct ServiceOptions {
    std::string host = "0.0.0.0";
    int port = kDefaultPort;
    std::string data_dir = "ensel-data";
    std::string model_dir;    // falls back to the config's model_dir
    std::string config_path;  // ensemble config file
    std::string static_dir;
    std::size_t max_upload_bytes = kDefaultUploadLimit;
};

// Applies ENSEL_PORT, ENSEL_DATA_DIR, ENSEL_MODEL_DIR, ENSEL_CONFIG and
// ENSEL_STATIC_DIR on top of `base`.
ServiceOptions options_from_env(ServiceOptions base = {});

// A config file holds one ensemble config object, an array of them, or
// {"configs": [...]}. The first config is the default.
std::vector<EnsembleConfig> load_ensemble_configs(const std::string& path);

struct ServiceResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

struct DiagnosisRecord {
    std::string id;
    std::string config_id;
    std::string original_filename;
    int width = 0;
    int height = 0;
    std::string received_at;
    std::string input_path;
    std::string overlay_path;
    nlohmann::json payload;  // diagnosis response without the overlay
};

nlohmann::json to_json(const DiagnosisRecord& record);
DiagnosisRecord record_from_json(const nlohmann::json& j);

bool is_uuid(const std::string& text) noexcept;

class DiagnosisService {
public:
    DiagnosisService(ModelRegistry registry, std::vector<EnsembleConfig> configs, std::string data_dir,
                     std::size_t max_upload_bytes = kDefaultUploadLimit);

    ServiceResponse diagnose(std::span<const std::uint8_t> bytes, const std::string& filename,
                             const std::string& config_id = {});
    ServiceResponse result(const std::string& id) const;
    ServiceResponse explain(const std::string& id, const std::string& member) const;
    ServiceResponse models() const;
    ServiceResponse health() const;

    std::size_t record_count() const;
    std::size_t max_upload_bytes() const noexcept { return max_upload_bytes_; }
    const std::string& data_dir() const noexcept { return data_dir_; }
    std::string records_path() const;
    void flush();

private:
    const EnsembleConfig* find_config(const std::string& id) const;
    std::string new_id();
    void persist(const DiagnosisRecord& record);

    ModelRegistry registry_;
    std::vector<EnsembleConfig> configs_;
    std::string data_dir_;
    std::size_t max_upload_bytes_;

    mutable std::shared_mutex records_mutex_;
    std::map<std::string, std::shared_ptr<const DiagnosisRecord>> records_;
    std::mutex log_mutex_;
    std::mutex id_mutex_;
    std::mt19937_64 id_rng_;
};

// Builds the service from options: loads the config(s) and the registry.
std::unique_ptr<DiagnosisService> make_service(const ServiceOptions& options);

class HttpServer {
public:
    HttpServer(DiagnosisService& service, std::string static_dir = {});
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Returns the bound port; 0 picks a free port. Throws Error(io) when the
    // port cannot be bound.
    int bind(const std::string& host, int port);
    // Blocks until stop().
    void run();
    void stop();
    bool running() const;
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ensel
