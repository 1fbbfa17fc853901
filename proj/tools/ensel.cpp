#include "ensel/ensemble.hpp"
#include "ensel/error.hpp"
#include "ensel/eval.hpp"
#include "ensel/model_io.hpp"
#include "ensel/registry.hpp"
#include "ensel/service.hpp"
#include "ensel/timing.hpp"
#include "ensel/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

#ifndef ENSEL_DEFAULT_STATIC_DIR
#define ENSEL_DEFAULT_STATIC_DIR ""
#endif

namespace fs = std::filesystem;
using namespace ensel;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

void ensure_parent(const std::string& path) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
        std::error_code ec;
        fs::create_directories(parent, ec);
    }
}

void write_text(const std::string& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error(Errc::io, "cannot write " + path);
}

std::string model_dir_for(const std::string& override_dir, const EnsembleConfig& config, const std::string& config_path) {
    if (!override_dir.empty()) return override_dir;
    if (!config.model_dir.empty()) return config.model_dir;
    return fs::path(config_path).parent_path().string();
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::missing_file, "cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct GenDataArgs {
    std::string out;
    std::uint64_t seed = 7;
    int per_class = 10;
    int size = 96;
    int noise_min = 20;
    int noise_max = 20;
};

int cmd_gen_data(const GenDataArgs& a) {
    SyntheticDatasetSpec spec;
    spec.per_class = a.per_class;
    spec.height = spec.width = a.size;
    spec.noise_min = a.noise_min;
    spec.noise_max = a.noise_max;
    const auto samples = generate_synthetic(spec, a.seed);
    write_dataset(a.out, samples);
    std::cout << json{{"out", a.out}, {"samples", samples.size()}, {"seed", a.seed}}.dump() << "\n";
    return 0;
}

struct TrainArgs {
    std::string task;
    std::string data;
    std::string out;
    std::string curve;
    std::uint64_t seed = 1;
    TrainConfig config;
    std::string id;
    std::string phase = "3rd";
    std::string created_at;
};

int cmd_train(TrainArgs a) {
    a.config.seed = a.seed;
    const auto dataset = read_dataset(a.data);
    const ModelMetadata meta{a.id.empty() ? fs::path(a.out).stem().string() : a.id, a.phase, a.created_at, "1"};
    LossCurve curve;
    EarlyStop stop;
    ensure_parent(a.out);
    if (a.task == "classifier") {
        auto r = train_classifier(dataset, a.config, meta);
        save_model(r.model, a.out);
        curve = r.curve;
        stop = r.stop;
    } else {
        auto r = train_detector(dataset, a.config, meta);
        save_model(r.model, a.out);
        curve = r.curve;
        stop = r.stop;
    }
    const std::string curve_path = a.curve.empty() ? a.out + ".loss.csv" : a.curve;
    write_text(curve_path, curve.csv());
    std::cout << json{{"model", a.out},
                      {"loss_curve", curve_path},
                      {"best_epoch", stop.best_epoch},
                      {"stop_epoch", stop.stop_epoch},
                      {"best_val_loss", curve.val_loss.at(stop.best_epoch - 1)}}
                     .dump()
              << "\n";
    return 0;
}

struct EvaluateArgs {
    std::string config;
    std::string data;
    std::string out;
    std::string json_out;
    std::string models;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const auto configs = load_ensemble_configs(a.config);
    const auto registry = registry_load(model_dir_for(a.models, configs.front(), a.config));
    std::vector<ComparisonEntry> entries;
    auto add = [&](const std::string& name, EnsembleConfig c) {
        for (const auto& e : entries)
            if (e.name == name) return;
        entries.push_back({name, std::move(c)});
    };
    for (const auto& c : configs) {
        if (c.members.size() > 1) {
            for (const auto& m : c.members) {
                EnsembleConfig single = c;
                single.id = m;
                single.members = {m};
                single.weights.clear();
                add(m, single);
            }
        }
        add(c.members.size() > 1 ? c.id : c.members.front(), c);
    }
    const auto test = read_dataset(a.data);
    const auto report = compare_models(entries, test, registry);
    write_text(a.out, report.csv());
    if (!a.json_out.empty()) write_text(a.json_out, report.json().dump(2) + "\n");
    std::cout << report.csv();
    return 0;
}

struct DiagnoseArgs {
    std::string image;
    std::string config;
    std::string overlay;
    std::string models;
};

int cmd_diagnose(const DiagnoseArgs& a) {
    const auto configs = load_ensemble_configs(a.config);
    const auto registry = registry_load(model_dir_for(a.models, configs.front(), a.config));
    const auto bytes = read_bytes(a.image);
    const auto run = run_pipeline(bytes, configs.front(), registry);
    if (!a.overlay.empty()) {
        std::ofstream out(a.overlay, std::ios::binary);
        out.write(reinterpret_cast<const char*>(run.overlay_png.data()), static_cast<std::streamsize>(run.overlay_png.size()));
        if (!out) throw Error(Errc::io, "cannot write " + a.overlay);
    }
    std::cout << diagnosis_json(run.diagnosis, false).dump(2) << "\n";
    return 0;
}

struct BenchArgs {
    std::string data;
    std::string config;
    int repeats = 2;
    std::string out;
    std::string csv;
    std::string models;
};

int cmd_bench(const BenchArgs& a) {
    const auto configs = load_ensemble_configs(a.config);
    const auto registry = registry_load(model_dir_for(a.models, configs.front(), a.config));
    const auto samples = read_dataset(a.data);
    std::vector<std::vector<std::uint8_t>> uploads;
    for (const auto& s : samples) uploads.push_back(encode(s.image, ImageFormat::png));
    std::vector<TimingBreakdown> timings;
    for (int r = 0; r < a.repeats; ++r)
        for (const auto& bytes : uploads) timings.push_back(run_pipeline(bytes, configs.front(), registry).diagnosis.timing);
    if (fs::exists(a.out)) fs::remove(a.out);
    append_jsonl(a.out, timings);
    const auto stats = summarize(timings);
    if (!a.csv.empty()) write_text(a.csv, stats_csv(stats));
    std::cout << to_json(stats).dump(2) << "\n";
    return 0;
}

struct ServeArgs {
    ServiceOptions options;
};

int cmd_serve(const ServeArgs& a) {
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    auto service = make_service(a.options);
    HttpServer server(*service, a.options.static_dir);
    const int port = server.bind(a.options.host, a.options.port);
    std::cerr << "ensel: serving on " << a.options.host << ":" << port << " (data " << service->data_dir() << ")\n";

    std::thread watcher([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
    });
    server.run();
    service->flush();
    if (watcher.joinable()) {
        pthread_kill(watcher.native_handle(), SIGTERM);
        watcher.join();
    }
    std::cerr << "ensel: shut down, " << service->record_count() << " records in " << service->records_path() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ensel: lesion detection and ensemble diagnosis toolkit"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Write a deterministic synthetic dataset");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--seed", gen.seed, "PRNG seed");
    gen_cmd->add_option("--per-class", gen.per_class, "Samples per class")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--size", gen.size, "Image side in pixels")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--noise-min", gen.noise_min, "Smallest per-sample noise amplitude");
    gen_cmd->add_option("--noise-max", gen.noise_max, "Largest per-sample noise amplitude");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train a detector or classifier");
    train_cmd->add_option("--task", train.task, "classifier or detector")
        ->required()
        ->check(CLI::IsMember({"classifier", "detector"}));
    train_cmd->add_option("--data", train.data, "Dataset directory")->required();
    train_cmd->add_option("--out", train.out, "Model file")->required();
    train_cmd->add_option("--seed", train.seed, "PRNG seed");
    train_cmd->add_option("--lr", train.config.learning_rate, "Learning rate");
    train_cmd->add_option("--epochs", train.config.epochs, "Maximum epochs");
    train_cmd->add_option("--patience", train.config.patience, "Early-stopping patience");
    train_cmd->add_option("--batch", train.config.batch_size, "Minibatch size");
    train_cmd->add_option("--curve", train.curve, "Loss-curve CSV (default <out>.loss.csv)");
    train_cmd->add_option("--id", train.id, "Model id stored in the metadata");
    train_cmd->add_option("--phase", train.phase, "Training phase stored in the metadata");
    train_cmd->add_option("--created-at", train.created_at, "Creation timestamp stored in the metadata");

    EvaluateArgs eval;
    auto* eval_cmd = app.add_subcommand("evaluate", "Compare single models and the ensemble on a dataset");
    eval_cmd->add_option("--config", eval.config, "Ensemble config JSON")->required();
    eval_cmd->add_option("--data", eval.data, "Test dataset directory")->required();
    eval_cmd->add_option("--out", eval.out, "Report CSV")->required();
    eval_cmd->add_option("--json", eval.json_out, "Report JSON");
    eval_cmd->add_option("--models", eval.models, "Model directory override");

    DiagnoseArgs diag;
    auto* diag_cmd = app.add_subcommand("diagnose", "Diagnose a single image and print the result as JSON");
    diag_cmd->add_option("--image", diag.image, "PNG or PPM image")->required();
    diag_cmd->add_option("--config", diag.config, "Ensemble config JSON")->required();
    diag_cmd->add_option("--overlay", diag.overlay, "Write the lesion overlay PNG here");
    diag_cmd->add_option("--models", diag.models, "Model directory override");

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "Time the full pipeline over a dataset");
    bench_cmd->add_option("--data", bench.data, "Dataset directory")->required();
    bench_cmd->add_option("--config", bench.config, "Ensemble config JSON")->required();
    bench_cmd->add_option("--repeats", bench.repeats, "Passes over the dataset")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--out", bench.out, "Timing log (JSON lines)")->required();
    bench_cmd->add_option("--csv", bench.csv, "Summary CSV");
    bench_cmd->add_option("--models", bench.models, "Model directory override");

    ServeArgs serve;
    serve.options.static_dir = ENSEL_DEFAULT_STATIC_DIR;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service until interrupted");
    int port = -1;
    std::string data_dir, model_dir, config_path, static_dir, host;
    serve_cmd->add_option("--port", port, "Port (default ENSEL_PORT or 8080)");
    serve_cmd->add_option("--host", host, "Bind address");
    serve_cmd->add_option("--data-dir", data_dir, "Record directory (ENSEL_DATA_DIR)");
    serve_cmd->add_option("--models", model_dir, "Model directory (ENSEL_MODEL_DIR)");
    serve_cmd->add_option("--config", config_path, "Ensemble config (ENSEL_CONFIG)");
    serve_cmd->add_option("--static", static_dir, "Static file directory served at /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen_cmd) return cmd_gen_data(gen);
        if (*train_cmd) return cmd_train(train);
        if (*eval_cmd) return cmd_evaluate(eval);
        if (*diag_cmd) return cmd_diagnose(diag);
        if (*bench_cmd) return cmd_bench(bench);
        if (*serve_cmd) {
            serve.options = options_from_env(serve.options);
            if (port >= 0) serve.options.port = port;
            if (!host.empty()) serve.options.host = host;
            if (!data_dir.empty()) serve.options.data_dir = data_dir;
            if (!model_dir.empty()) serve.options.model_dir = model_dir;
            if (!config_path.empty()) serve.options.config_path = config_path;
            if (!static_dir.empty()) serve.options.static_dir = static_dir;
            return cmd_serve(serve);
        }
    } catch (const TrainingError& e) {
        std::cerr << "error: training diverged at epoch " << e.epoch() << ": " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
