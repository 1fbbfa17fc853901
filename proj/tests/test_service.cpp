#include "ensel/service.hpp"

#include "ensel/imaging.hpp"

#include "test_util.hpp"
#include "toy_models.hpp"

#include <doctest.h>
#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

using namespace ensel;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> png_of(const ImageU8& img) { return encode(img, ImageFormat::png); }

ImageU8 lesion_image() { return toy::red_squares(96, 96, {BBox{30, 30, 60, 60}}); }
ImageU8 healthy_image() { return toy::red_squares(64, 80, {}); }

std::vector<EnsembleConfig> toy_configs() {
    auto single = toy::config({"A"});
    single.id = "single";
    return {toy::config(), single};
}

DiagnosisService make_toy_service(const std::string& dir, std::size_t limit = kDefaultUploadLimit) {
    return DiagnosisService(toy::registry(), toy_configs(), dir, limit);
}

json body_json(const ServiceResponse& r) { return json::parse(r.body); }

double sum_of(const json& dist) {
    double s = 0.0;
    for (const auto& [k, v] : dist.items()) s += v.get<double>();
    return s;
}

void check_schema(const json& j) {
    for (const char* key : {"id", "final", "distribution", "per_model", "boxes", "timing_ms"}) CHECK(j.contains(key));
    CHECK(is_uuid(j["id"].get<std::string>()));
    CHECK(j["final"].contains("label"));
    CHECK(j["final"]["probability"].is_number());
    for (const char* key : {"decode", "detect", "classify", "vote", "visualize", "encode", "total"})
        CHECK(j["timing_ms"][key].is_number());
    for (const auto& b : j["boxes"])
        for (const char* key : {"x0", "y0", "x1", "y1", "score"}) CHECK(b[key].is_number());
}

}  // namespace

TEST_CASE("diagnose a lesion image") {
    testutil::TempDir dir("svc_lesion");
    auto svc = make_toy_service(dir.path().string());
    const auto r = svc.diagnose(png_of(lesion_image()), "lesion.png");
    REQUIRE(r.status == 200);
    CHECK(r.content_type == "application/json");
    const auto j = body_json(r);
    check_schema(j);
    CHECK(sum_of(j["distribution"]) == doctest::Approx(1.0));
    REQUIRE(j["boxes"].size() == 1);
    CHECK(j["boxes"][0]["x0"] == 30);
    CHECK(j["per_model"].size() == 2);

    const auto rec = body_json(svc.result(j["id"].get<std::string>()));
    std::ifstream in(rec["record"]["overlay_path"].get<std::string>(), std::ios::binary);
    const std::vector<std::uint8_t> stored_png(std::istreambuf_iterator<char>(in), {});
    const auto overlay = decode_any(stored_png);
    CHECK(overlay.width == 96);
    CHECK(overlay.height == 96);
    CHECK(base64_encode(stored_png) == j["overlay_png_base64"].get<std::string>());
}

TEST_CASE("healthy image gives no boxes and an image-level decision") {
    testutil::TempDir dir("svc_healthy");
    auto svc = make_toy_service(dir.path().string());
    const auto r = svc.diagnose(encode(healthy_image(), ImageFormat::ppm), "h.ppm");
    REQUIRE(r.status == 200);
    const auto j = body_json(r);
    check_schema(j);
    CHECK(j["boxes"].empty());
    CHECK(j["resolution"] == "80x64");
}

TEST_CASE("diagnose error statuses") {
    testutil::TempDir dir("svc_errors");
    auto svc = make_toy_service(dir.path().string(), 4096);
    CHECK(svc.diagnose({}, "").status == 400);

    std::vector<std::uint8_t> big(5000, 0x50);
    CHECK(svc.diagnose(big, "").status == 413);

    const std::vector<std::uint8_t> gif = {'G', 'I', 'F', '8', '9', 'a', 0, 0, 0, 0};
    const auto unsupported = svc.diagnose(gif, "x.gif");
    CHECK(unsupported.status == 422);
    CHECK(body_json(unsupported).contains("error"));

    auto truncated = png_of(toy::red_squares(8, 8, {}));
    truncated.resize(truncated.size() / 2);
    CHECK(svc.diagnose(truncated, "").status == 400);

    const auto ppm = encode(toy::red_squares(8, 8, {}), ImageFormat::ppm);
    CHECK(svc.diagnose(ppm, "", "no_such_config").status == 400);
    CHECK(svc.diagnose(ppm, "", "single").status == 200);
    CHECK(svc.record_count() == 1);
}

TEST_CASE("pipeline failure reports the stage") {
    testutil::TempDir dir("svc_pipeline");
    ModelRegistry disjoint;
    disjoint.add(toy::detector_entry("D", toy::red_detector()));
    disjoint.add(toy::classifier_entry("P", toy::biased_classifier({"a", "b"}, 1)));
    disjoint.add(toy::classifier_entry("Q", toy::biased_classifier({"c", "d"}, 2)));
    DiagnosisService svc(std::move(disjoint), {toy::config({"P", "Q"})}, dir.path().string());
    const auto r = svc.diagnose(png_of(lesion_image()), "");
    CHECK(r.status == 500);
    CHECK(body_json(r)["stage"] == "vote");
    CHECK(svc.record_count() == 0);

    CHECK_THROWS_AS(DiagnosisService(toy::registry(), {toy::config({"A", "Missing"})}, dir.str("other")), Error);
    CHECK_THROWS_AS(DiagnosisService(toy::registry(), {}, dir.str("other")), Error);
}

TEST_CASE("results round trip and persistence") {
    testutil::TempDir dir("svc_results");
    auto svc = make_toy_service(dir.path().string());
    const auto r = svc.diagnose(png_of(lesion_image()), "lesion.png");
    REQUIRE(r.status == 200);
    auto posted = body_json(r);
    const auto id = posted["id"].get<std::string>();

    const auto got = svc.result(id);
    REQUIRE(got.status == 200);
    auto stored = body_json(got);
    CHECK(stored["record"]["original_filename"] == "lesion.png");
    CHECK(stored["record"]["width"] == 96);
    CHECK(fs::exists(stored["record"]["overlay_path"].get<std::string>()));
    stored.erase("record");
    posted.erase("overlay_png_base64");
    CHECK(stored == posted);

    CHECK(svc.result("00000000-0000-4000-8000-000000000000").status == 404);
    CHECK(svc.result("not-a-uuid").status == 404);
    CHECK(svc.result("../records.jsonl").status == 404);

    std::ifstream log(svc.records_path());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(log, line)) {
        const auto rec = record_from_json(json::parse(line));
        CHECK(rec.id == id);
        CHECK(fs::exists(rec.input_path));
        ++lines;
    }
    CHECK(lines == 1);
}

TEST_CASE("explain endpoint") {
    testutil::TempDir dir("svc_explain");
    auto svc = make_toy_service(dir.path().string());
    const auto id = body_json(svc.diagnose(png_of(lesion_image()), ""))["id"].get<std::string>();
    const auto r = svc.explain(id, "B");
    REQUIRE(r.status == 200);
    CHECK(r.content_type == "image/png");
    const auto img = decode_any(std::vector<std::uint8_t>(r.body.begin(), r.body.end()));
    CHECK(img.width == 96);
    CHECK(img.height == 96);
    CHECK(svc.explain(id, "").status == 200);
    CHECK(svc.explain(id, "Z").status == 404);
    CHECK(svc.explain(id, "D").status == 404);
    CHECK(svc.explain("00000000-0000-4000-8000-000000000000", "A").status == 404);

    const auto hid = body_json(svc.diagnose(png_of(healthy_image()), ""))["id"].get<std::string>();
    const auto h = svc.explain(hid, "A");
    REQUIRE(h.status == 200);
    CHECK(decode_any(std::vector<std::uint8_t>(h.body.begin(), h.body.end())).width == 80);
}

TEST_CASE("explain with a member lacking the decided class") {
    testutil::TempDir dir("svc_explain_labels");
    ModelRegistry reg;
    reg.add(toy::detector_entry("D", toy::red_detector()));
    reg.add(toy::classifier_entry("Wide", toy::biased_classifier({"a", "b", "c"}, 1, 0, 30.0)));
    reg.add(toy::classifier_entry("Narrow", toy::biased_classifier({"b", "c"}, 2)));
    auto cfg = toy::config({"Wide", "Narrow"});
    cfg.alignment = AlignmentPolicy::union_zero_fill;
    DiagnosisService svc(std::move(reg), {cfg}, dir.path().string());
    const auto r = svc.diagnose(png_of(lesion_image()), "");
    REQUIRE(r.status == 200);
    const auto j = body_json(r);
    REQUIRE(j["final"]["label"] == "a");
    const auto id = j["id"].get<std::string>();
    CHECK(svc.explain(id, "Narrow").status == 422);
    CHECK(svc.explain(id, "Wide").status == 200);
}

TEST_CASE("models and health") {
    testutil::TempDir dir("svc_models");
    auto svc = make_toy_service(dir.path().string());
    const auto h = body_json(svc.health());
    CHECK(h["status"] == "ok");
    CHECK(h["models_loaded"] == 3);
    const auto m = body_json(svc.models());
    CHECK(m["models"].size() == 3);
    CHECK(m["configs"].size() == 2);
}

TEST_CASE("uuid format") {
    CHECK(is_uuid("123e4567-e89b-42d3-a456-426614174000"));
    CHECK_FALSE(is_uuid("123e4567-e89b-42d3-a456-42661417400"));
    CHECK_FALSE(is_uuid("123e4567xe89b-42d3-a456-426614174000"));
    CHECK_FALSE(is_uuid(""));
}

TEST_CASE("environment options and config files") {
    testutil::TempDir dir("svc_env");
    ::setenv("ENSEL_PORT", "9123", 1);
    ::setenv("ENSEL_DATA_DIR", "/tmp/ensel-env-data", 1);
    const auto o = options_from_env();
    CHECK(o.port == 9123);
    CHECK(o.data_dir == "/tmp/ensel-env-data");
    ::unsetenv("ENSEL_PORT");
    ::unsetenv("ENSEL_DATA_DIR");

    const auto path = dir.str("cfg.json");
    {
        std::ofstream out(path);
        out << json{{"configs", {to_json(toy_configs()[0]), to_json(toy_configs()[1])}}}.dump();
    }
    const auto configs = load_ensemble_configs(path);
    REQUIRE(configs.size() == 2);
    CHECK(configs[0].id == "toy");
    CHECK(configs[1].members == std::vector<std::string>{"A"});
}

TEST_CASE("http server end to end") {
    testutil::TempDir dir("svc_http");
    auto svc = make_toy_service(dir.path().string(), 1 << 20);
    const auto static_dir = dir.path() / "static";
    fs::create_directories(static_dir);
    {
        std::ofstream out(static_dir / "index.html");
        out << "<html>ui</html>";
    }
    HttpServer server(svc, static_dir.string());
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread th([&] { server.run(); });
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(60, 0);

    auto health = cli.Get("/api/health");
    REQUIRE(health);
    CHECK(health->status == 200);

    auto index = cli.Get("/");
    REQUIRE(index);
    CHECK(index->status == 200);
    CHECK(index->body.find("ui") != std::string::npos);

    const auto png = png_of(lesion_image());
    httplib::MultipartFormDataItems items = {
        {"image", std::string(png.begin(), png.end()), "lesion.png", "image/png"}};
    auto posted = cli.Post("/api/diagnose", items);
    REQUIRE(posted);
    REQUIRE(posted->status == 200);
    auto j = json::parse(posted->body);
    check_schema(j);
    const auto id = j["id"].get<std::string>();

    auto raw = cli.Post("/api/diagnose?config=single", std::string(png.begin(), png.end()), "application/octet-stream");
    REQUIRE(raw);
    CHECK(raw->status == 200);
    CHECK(json::parse(raw->body)["config"] == "single");

    auto got = cli.Get("/api/results/" + id);
    REQUIRE(got);
    CHECK(got->status == 200);
    CHECK(json::parse(got->body)["final"] == j["final"]);

    auto ex = cli.Get("/api/explain/" + id + "?model=A");
    REQUIRE(ex);
    CHECK(ex->status == 200);
    CHECK(ex->get_header_value("Content-Type") == "image/png");

    CHECK(cli.Get("/api/results/nope")->status == 404);
    CHECK(cli.Get("/api/explain/" + id + "?model=Q")->status == 404);
    CHECK(cli.Post("/api/diagnose", "", "application/octet-stream")->status == 400);
    CHECK(cli.Post("/api/diagnose", std::string(2 << 20, 'x'), "application/octet-stream")->status == 413);
    CHECK(cli.Post("/api/diagnose", std::string("BM\0\0junk", 8), "application/octet-stream")->status == 422);
    CHECK(cli.Get("/api/models")->status == 200);

    // Concurrent requests yield the same multiset of labels as sequential runs.
    std::vector<std::vector<std::uint8_t>> inputs;
    for (int i = 0; i < 32; ++i)
        inputs.push_back(png_of(toy::red_squares(48 + (i % 4) * 8, 48, i % 3 ? std::vector<BBox>{BBox{4 + i % 5, 6, 30, 30}}
                                                                              : std::vector<BBox>{})));
    std::vector<std::string> sequential;
    for (const auto& in : inputs)
        sequential.push_back(body_json(svc.diagnose(in, ""))["final"]["label"].get<std::string>());
    std::vector<std::future<std::string>> futures;
    for (const auto& in : inputs)
        futures.push_back(std::async(std::launch::async, [&, port] {
            httplib::Client c("127.0.0.1", port);
            c.set_read_timeout(120, 0);
            auto res = c.Post("/api/diagnose", std::string(in.begin(), in.end()), "image/png");
            if (!res || res->status != 200) return std::string("<failed>");
            return json::parse(res->body)["final"]["label"].get<std::string>();
        }));
    bool health_ok = cli.Get("/api/health")->status == 200;
    std::vector<std::string> concurrent;
    for (auto& f : futures) concurrent.push_back(f.get());
    CHECK(health_ok);
    std::sort(sequential.begin(), sequential.end());
    std::sort(concurrent.begin(), concurrent.end());
    CHECK(concurrent == sequential);
    CHECK(svc.record_count() == 2 + 32 + 32);

    server.stop();
    th.join();
}
