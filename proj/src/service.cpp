#include "ensel/service.hpp"

#include "ensel/error.hpp"
#include "ensel/explain.hpp"

#define CPPHTTPLIB_LISTEN_BACKLOG 128
#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace ensel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

ServiceResponse json_response(int status, const json& body) {
    return {status, "application/json", body.dump()};
}

ServiceResponse error_response(int status, const std::string& message, const std::string& stage = {}) {
    json body = {{"error", message}, {"status", status}};
    if (!stage.empty()) body["stage"] = stage;
    return json_response(status, body);
}

}  // namespace

ServiceOptions options_from_env(ServiceOptions base) {
    if (const char* port = std::getenv("ENSEL_PORT"); port && *port) {
        char* end = nullptr;
        const long v = std::strtol(port, &end, 10);
        if (*end != '\0' || v < 0 || v > 65535) throw Error(Errc::invalid_argument, "ENSEL_PORT is not a valid port");
        base.port = static_cast<int>(v);
    }
    base.data_dir = env_or("ENSEL_DATA_DIR", base.data_dir);
    base.model_dir = env_or("ENSEL_MODEL_DIR", base.model_dir);
    base.config_path = env_or("ENSEL_CONFIG", base.config_path);
    base.static_dir = env_or("ENSEL_STATIC_DIR", base.static_dir);
    return base;
}

std::vector<EnsembleConfig> load_ensemble_configs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::missing_file, "cannot open ensemble config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, "ensemble config is not valid JSON: " + std::string(e.what()));
    }
    const json list = j.is_array() ? j : (j.is_object() && j.contains("configs") ? j.at("configs") : json::array({j}));
    if (list.empty()) throw Error(Errc::invalid_argument, "no ensemble configs in " + path);
    std::vector<EnsembleConfig> configs;
    for (const auto& item : list) {
        auto c = config_from_json(item);
        if (!c.model_dir.empty() && fs::path(c.model_dir).is_relative())
            c.model_dir = (fs::path(path).parent_path() / c.model_dir).lexically_normal().string();
        configs.push_back(std::move(c));
    }
    return configs;
}

json to_json(const DiagnosisRecord& r) {
    return {{"id", r.id},
            {"config", r.config_id},
            {"original_filename", r.original_filename},
            {"width", r.width},
            {"height", r.height},
            {"received_at", r.received_at},
            {"input_path", r.input_path},
            {"overlay_path", r.overlay_path},
            {"diagnosis", r.payload}};
}

DiagnosisRecord record_from_json(const json& j) {
    DiagnosisRecord r;
    r.id = j.at("id").get<std::string>();
    r.config_id = j.value("config", std::string{});
    r.original_filename = j.value("original_filename", std::string{});
    r.width = j.value("width", 0);
    r.height = j.value("height", 0);
    r.received_at = j.value("received_at", std::string{});
    r.input_path = j.value("input_path", std::string{});
    r.overlay_path = j.value("overlay_path", std::string{});
    r.payload = j.at("diagnosis");
    return r;
}

bool is_uuid(const std::string& s) noexcept {
    if (s.size() != 36) return false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (i == 8 || i == 13 || i == 18 || i == 23) {
            if (c != '-') return false;
        } else if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) {
            return false;
        }
    }
    return true;
}

DiagnosisService::DiagnosisService(ModelRegistry registry, std::vector<EnsembleConfig> configs, std::string data_dir,
                                   std::size_t max_upload_bytes)
    : registry_(std::move(registry)),
      configs_(std::move(configs)),
      data_dir_(std::move(data_dir)),
      max_upload_bytes_(max_upload_bytes),
      id_rng_(std::random_device{}()) {
    if (configs_.empty()) throw Error(Errc::invalid_argument, "service needs at least one ensemble config");
    for (const auto& c : configs_) validate(c, registry_);
    std::error_code ec;
    fs::create_directories(fs::path(data_dir_) / "images", ec);
    if (ec) throw Error(Errc::io, "cannot create data directory " + data_dir_ + ": " + ec.message());

    std::ifstream log(records_path());
    std::string line;
    while (std::getline(log, line)) {
        if (line.empty()) continue;
        try {
            auto rec = std::make_shared<DiagnosisRecord>(record_from_json(json::parse(line)));
            records_[rec->id] = std::move(rec);
        } catch (const std::exception&) {
            // A torn trailing line from an interrupted write is skipped.
        }
    }
}

std::string DiagnosisService::records_path() const { return (fs::path(data_dir_) / "records.jsonl").string(); }

std::size_t DiagnosisService::record_count() const {
    std::shared_lock lock(records_mutex_);
    return records_.size();
}

const EnsembleConfig* DiagnosisService::find_config(const std::string& id) const {
    if (id.empty()) return &configs_.front();
    for (const auto& c : configs_)
        if (c.id == id) return &c;
    return nullptr;
}

std::string DiagnosisService::new_id() {
    std::uint64_t hi, lo;
    {
        std::lock_guard lock(id_mutex_);
        hi = id_rng_();
        lo = id_rng_();
    }
    hi = (hi & 0xFFFFFFFFFFFF0FFFULL) | 0x0000000000004000ULL;
    lo = (lo & 0x3FFFFFFFFFFFFFFFULL) | 0x8000000000000000ULL;
    char buf[37];
    std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx", static_cast<unsigned>(hi >> 32),
                  static_cast<unsigned>((hi >> 16) & 0xFFFF), static_cast<unsigned>(hi & 0xFFFF),
                  static_cast<unsigned>(lo >> 48), static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFULL));
    return buf;
}

void DiagnosisService::persist(const DiagnosisRecord& record) {
    const std::string line = to_json(record).dump() + "\n";
    {
        std::lock_guard lock(log_mutex_);
        std::ofstream out(records_path(), std::ios::app | std::ios::binary);
        out << line;
        out.flush();
        if (!out) throw Error(Errc::io, "cannot append to " + records_path());
    }
    std::unique_lock lock(records_mutex_);
    records_[record.id] = std::make_shared<const DiagnosisRecord>(record);
}

void DiagnosisService::flush() {
    // Every record is flushed as it is written; taking the lock waits for an
    // in-flight append to finish.
    std::lock_guard lock(log_mutex_);
}

ServiceResponse DiagnosisService::diagnose(std::span<const std::uint8_t> bytes, const std::string& filename,
                                           const std::string& config_id) {
    const auto started = std::chrono::steady_clock::now();
    if (bytes.empty()) return error_response(400, "empty image body");
    if (bytes.size() > max_upload_bytes_)
        return error_response(413, "image exceeds the upload limit of " + std::to_string(max_upload_bytes_) + " bytes");
    const EnsembleConfig* config = find_config(config_id);
    if (!config) return error_response(400, "unknown config '" + config_id + "'");
    if (!sniff_format(bytes)) return error_response(422, "unsupported image format (expected PNG or PPM)");

    PipelineRun run;
    try {
        run = run_pipeline(bytes, *config, registry_);
    } catch (const PipelineError& e) {
        return error_response(500, e.what(), e.stage());
    } catch (const Error& e) {
        if (e.code() == Errc::unsupported_format) return error_response(422, e.what());
        return error_response(400, std::string("cannot decode image: ") + e.what());
    }

    DiagnosisRecord rec;
    rec.id = new_id();
    rec.config_id = config->id;
    rec.original_filename = filename;
    rec.width = run.input.width;
    rec.height = run.input.height;
    rec.received_at = utc_timestamp();
    const auto images = fs::path(data_dir_) / "images";
    rec.input_path = (images / (rec.id + ".ppm")).string();
    rec.overlay_path = (images / (rec.id + "_overlay.png")).string();

    run.diagnosis.request_id = rec.id;
    rec.payload = diagnosis_json(run.diagnosis, false);
    rec.payload["service_total_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();

    try {
        write_image(rec.input_path, run.input, ImageFormat::ppm);
        std::ofstream out(rec.overlay_path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(run.overlay_png.data()), static_cast<std::streamsize>(run.overlay_png.size()));
        if (!out) throw Error(Errc::io, "cannot write " + rec.overlay_path);
        out.close();
        persist(rec);
    } catch (const std::exception& e) {
        return error_response(500, e.what(), "persist");
    }

    json body = rec.payload;
    body["overlay_png_base64"] = base64_encode(run.overlay_png);
    return json_response(200, body);
}

ServiceResponse DiagnosisService::result(const std::string& id) const {
    if (!is_uuid(id)) return error_response(404, "no result with id '" + id + "'");
    std::shared_ptr<const DiagnosisRecord> rec;
    {
        std::shared_lock lock(records_mutex_);
        const auto it = records_.find(id);
        if (it == records_.end()) return error_response(404, "no result with id '" + id + "'");
        rec = it->second;
    }
    json body = rec->payload;
    body["record"] = {{"original_filename", rec->original_filename},
                      {"width", rec->width},
                      {"height", rec->height},
                      {"received_at", rec->received_at},
                      {"overlay_path", rec->overlay_path}};
    return json_response(200, body);
}

ServiceResponse DiagnosisService::explain(const std::string& id, const std::string& member) const {
    if (!is_uuid(id)) return error_response(404, "no result with id '" + id + "'");
    std::shared_ptr<const DiagnosisRecord> rec;
    {
        std::shared_lock lock(records_mutex_);
        const auto it = records_.find(id);
        if (it == records_.end()) return error_response(404, "no result with id '" + id + "'");
        rec = it->second;
    }
    const EnsembleConfig* config = find_config(rec->config_id);
    if (!config) return error_response(404, "config '" + rec->config_id + "' is no longer loaded");
    const std::string model_id = member.empty() ? config->members.front() : member;
    if (std::find(config->members.begin(), config->members.end(), model_id) == config->members.end())
        return error_response(404, "model '" + model_id + "' is not a member of config '" + config->id + "'");

    try {
        const auto& model = registry_.classifier(model_id);
        const std::string target = rec->payload.at("final").at("label").get<std::string>();
        if (std::find(model.labels.begin(), model.labels.end(), target) == model.labels.end())
            return error_response(422, "model '" + model_id + "' has no class '" + target + "'");
        std::optional<BBox> region;
        const auto& boxes = rec->payload.at("boxes");
        if (!boxes.empty()) {
            const auto& b = boxes.front();
            region = BBox{b.at("x0").get<int>(), b.at("y0").get<int>(), b.at("x1").get<int>(), b.at("y1").get<int>(), 1.0, std::nullopt};
        }
        const ImageU8 image = read_image(rec->input_path);
        const ImageU8 overlay = explain_overlay(image, model, target, region, config->overlay_alpha);
        const auto png = encode(overlay, ImageFormat::png);
        return {200, "image/png", std::string(png.begin(), png.end())};
    } catch (const std::exception& e) {
        return error_response(500, e.what(), "explain");
    }
}

ServiceResponse DiagnosisService::models() const {
    json list = json::array();
    for (const auto& [id, e] : registry_.entries()) {
        json item = {{"id", id},
                     {"file", e.file},
                     {"role", to_string(e.role)},
                     {"training_phase", e.training_phase},
                     {"class_count", e.class_count}};
        if (e.classifier) item["labels"] = e.classifier->labels;
        list.push_back(std::move(item));
    }
    json configs = json::array();
    for (const auto& c : configs_) configs.push_back(to_json(c));
    return json_response(200, {{"models", list}, {"configs", configs}});
}

ServiceResponse DiagnosisService::health() const {
    return json_response(200, {{"status", "ok"}, {"models_loaded", registry_.size()}});
}

std::unique_ptr<DiagnosisService> make_service(const ServiceOptions& options) {
    if (options.config_path.empty()) throw Error(Errc::invalid_argument, "no ensemble config given (ENSEL_CONFIG)");
    auto configs = load_ensemble_configs(options.config_path);
    std::string model_dir = options.model_dir;
    if (model_dir.empty()) model_dir = configs.front().model_dir;
    if (model_dir.empty()) model_dir = fs::path(options.config_path).parent_path().string();
    auto registry = registry_load(model_dir);
    return std::make_unique<DiagnosisService>(std::move(registry), std::move(configs), options.data_dir,
                                              options.max_upload_bytes);
}

struct HttpServer::Impl {
    httplib::Server server;
};

namespace {

void reply(httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
}

}  // namespace

HttpServer::HttpServer(DiagnosisService& service, std::string static_dir) : impl_(std::make_unique<Impl>()) {
    auto& svr = impl_->server;
    svr.set_payload_max_length(service.max_upload_bytes() + 1024 * 1024);
    // Plain SO_REUSEADDR so that a second server on a taken port fails to bind.
    svr.set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });

    svr.Post("/api/diagnose", [&service](const httplib::Request& req, httplib::Response& res) {
        std::string filename;
        const std::string* body = &req.body;
        httplib::MultipartFormData file;
        if (req.is_multipart_form_data()) {
            if (req.has_file("image")) {
                file = req.get_file_value("image");
            } else if (!req.files.empty()) {
                file = req.files.begin()->second;
            } else {
                reply(res, error_response(400, "multipart request has no image field"));
                return;
            }
            body = &file.content;
            filename = file.filename;
        }
        const auto* data = reinterpret_cast<const std::uint8_t*>(body->data());
        reply(res, service.diagnose({data, body->size()}, filename, req.get_param_value("config")));
    });
    svr.Get(R"(/api/results/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.result(req.matches[1]));
    });
    svr.Get(R"(/api/explain/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.explain(req.matches[1], req.get_param_value("model")));
    });
    svr.Get("/api/models", [&service](const httplib::Request&, httplib::Response& res) { reply(res, service.models()); });
    svr.Get("/api/health", [&service](const httplib::Request&, httplib::Response& res) { reply(res, service.health()); });

    svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (!res.body.empty()) return;
        const std::string message = res.status == 413 ? "request body too large" : "not found";
        reply(res, error_response(res.status, message));
    });
    svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string message = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            message = e.what();
        } catch (...) {
        }
        reply(res, error_response(500, message));
    });

    if (!static_dir.empty() && fs::is_directory(static_dir)) svr.set_mount_point("/", static_dir);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    auto& svr = impl_->server;
    if (port == 0) {
        const int bound = svr.bind_to_any_port(host);
        if (bound < 0) throw Error(Errc::io, "cannot bind to " + host);
        return bound;
    }
    if (!svr.bind_to_port(host, port)) throw Error(Errc::io, "cannot bind to " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace ensel
