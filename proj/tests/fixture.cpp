#include "fixture.hpp"

#include "ensel/ensemble.hpp"
#include "ensel/error.hpp"
#include "ensel/eval.hpp"
#include "ensel/model_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

#ifndef ENSEL_FIXTURE_DIR
#error "ENSEL_FIXTURE_DIR must be defined"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace fixture {

namespace {

std::string stamp_version() {
    return "fixture-v2 noise " + std::to_string(kNoiseMin) + "-" + std::to_string(kNoiseMax) + " seeds " +
           std::to_string(kTrainSeed) + "/" + std::to_string(kTestSeed);
}

std::string path(const std::string& leaf) { return (fs::path(root()) / leaf).string(); }

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

void write_json(const std::string& file, const json& j) {
    std::ofstream out(file, std::ios::binary);
    out << j.dump(2) << "\n";
    if (!out) throw ensel::Error(ensel::Errc::io, "cannot write " + file);
}

}  // namespace

std::string root() { return ENSEL_FIXTURE_DIR; }
std::string models_dir() { return path("models"); }
std::string train_dir() { return path("train400"); }
std::string test_dir() { return path("test110"); }
std::string ensemble_config() { return path("ensemble.json"); }
std::string reference_config() { return path("reference.json"); }
std::string build_info() { return path("build_info.json"); }

ensel::SyntheticDatasetSpec spec(int per_class) {
    ensel::SyntheticDatasetSpec s;
    s.per_class = per_class;
    s.noise_min = kNoiseMin;
    s.noise_max = kNoiseMax;
    return s;
}

ensel::TrainConfig detector_config() {
    ensel::TrainConfig c;
    c.epochs = 25;
    c.seed = kDetectorSeed;
    return c;
}

ensel::TrainConfig classifier_config(std::uint64_t seed) {
    ensel::TrainConfig c;
    c.epochs = 30;
    c.seed = seed;
    return c;
}

void split_by_noise(const std::vector<ensel::LabeledSample>& samples, std::vector<ensel::LabeledSample>& low,
                    std::vector<ensel::LabeledSample>& high) {
    std::vector<int> noise;
    for (const auto& s : samples) noise.push_back(s.noise);
    std::sort(noise.begin(), noise.end());
    const int median = noise[(noise.size() - 1) / 2];
    for (const auto& s : samples) (s.noise <= median ? low : high).push_back(s);
}

std::vector<ensel::LabeledSample> cam_set() {
    ensel::SyntheticDatasetSpec s;
    s.classes = {"atopic_dermatitis", "psoriasis", "nevus"};
    s.per_class = 17;
    auto samples = ensel::generate_synthetic(s, kCamSeed);
    samples.resize(kCamCount);
    return samples;
}

bool ensure_built() {
    const auto stamp = path(".complete");
    if (std::ifstream in(stamp); in) {
        std::string version;
        std::getline(in, version);
        if (version == stamp_version()) return false;
    }
    const auto start = std::chrono::steady_clock::now();
    fs::remove_all(root());
    fs::create_directories(models_dir());

    const auto train = ensel::generate_synthetic(spec(kTrainPerClass), kTrainSeed);
    auto test = ensel::generate_synthetic(spec((kTestCount + 3) / 4), kTestSeed);
    test.resize(kTestCount);
    ensel::write_dataset(train_dir(), train);
    ensel::write_dataset(test_dir(), test);

    const auto split = ensel::split_dataset(train, {0.7, 0.2, 0.1}, kSplitSeed);
    auto t = std::chrono::steady_clock::now();
    auto det = ensel::train_detector(split.train, split.validation, detector_config(), {"D1", "3rd", "", "1"});
    const double detector_s = seconds_since(t);
    t = std::chrono::steady_clock::now();
    auto ref = ensel::train_classifier(split.train, split.validation, classifier_config(kReferenceSeed),
                                       {"REF", "3rd", "", "1"});
    const double reference_s = seconds_since(t);

    std::vector<ensel::LabeledSample> low, high;
    split_by_noise(train, low, high);
    t = std::chrono::steady_clock::now();
    const auto low_split = ensel::split_dataset(low, {0.8, 0.2, 0.0}, kSplitSeed);
    const auto high_split = ensel::split_dataset(high, {0.8, 0.2, 0.0}, kSplitSeed);
    auto m2 = ensel::train_classifier(low_split.train, low_split.validation, classifier_config(kLowNoiseSeed),
                                      {"M2", "3rd", "", "1"});
    auto m8 = ensel::train_classifier(high_split.train, high_split.validation, classifier_config(kHighNoiseSeed),
                                      {"M8", "3rd", "", "1"});
    const double members_s = seconds_since(t);

    ensel::save_model(det.model, path("models/d1.ensl"));
    ensel::save_model(ref.model, path("models/ref.ensl"));
    ensel::save_model(m2.model, path("models/m2.ensl"));
    ensel::save_model(m8.model, path("models/m8.ensl"));
    ensel::write_manifest(models_dir(), {{"D1", "d1.ensl", ensel::ModelRole::detector, "3rd", 0},
                                         {"REF", "ref.ensl", ensel::ModelRole::classifier, "3rd", 4},
                                         {"M2", "m2.ensl", ensel::ModelRole::classifier, "3rd", 4},
                                         {"M8", "m8.ensl", ensel::ModelRole::classifier, "3rd", 4}});
    for (const auto& [name, r] : {std::pair{"ref", &ref}, std::pair{"m2", &m2}, std::pair{"m8", &m8}}) {
        std::ofstream(path(std::string("models/") + name + ".loss.csv")) << r->curve.csv();
    }
    std::ofstream(path("models/d1.loss.csv")) << det.curve.csv();

    ensel::EnsembleConfig ens;
    ens.id = "M2+M8";
    ens.members = {"M2", "M8"};
    ens.detector = "D1";
    ens.model_dir = "models";
    write_json(ensemble_config(), ensel::to_json(ens));
    ensel::EnsembleConfig single = ens;
    single.id = "REF";
    single.members = {"REF"};
    write_json(reference_config(), ensel::to_json(single));

    write_json(build_info(), {{"detector_seconds", detector_s},
                              {"reference_seconds", reference_s},
                              {"members_seconds", members_s},
                              {"total_seconds", seconds_since(start)},
                              {"detector_best_epoch", det.stop.best_epoch},
                              {"reference_best_epoch", ref.stop.best_epoch},
                              {"m2_best_epoch", m2.stop.best_epoch},
                              {"m8_best_epoch", m8.stop.best_epoch},
                              {"low_noise_samples", low.size()},
                              {"high_noise_samples", high.size()}});
    std::ofstream(stamp) << stamp_version() << "\n";
    return true;
}

}  // namespace fixture
