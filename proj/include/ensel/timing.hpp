#pragma once

// Stage-level latency instrumentation and distribution summaries.

#include <array>
#include <chrono>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ensel {

enum class Stage : std::size_t {
    decode,
    detect_inference,
    classify_inference,
    vote,
    cam,
    visualization,
    encode,
};

inline constexpr std::size_t kStageCount = 7;
inline constexpr std::array<Stage, kStageCount> kAllStages = {
    Stage::decode, Stage::detect_inference, Stage::classify_inference, Stage::vote,
    Stage::cam,    Stage::visualization,    Stage::encode};

std::string_view stage_name(Stage stage) noexcept;

struct TimingBreakdown {
    std::array<double, kStageCount> stage_ms{};
    double total_ms = 0.0;
    std::string resolution;  // "<W>x<H>"

    double& operator[](Stage s) noexcept { return stage_ms[static_cast<std::size_t>(s)]; }
    double operator[](Stage s) const noexcept { return stage_ms[static_cast<std::size_t>(s)]; }
    double inference_ms() const noexcept { return (*this)[Stage::detect_inference] + (*this)[Stage::classify_inference]; }
    // Overlay rendering plus encoding of the delivered result image.
    double visualization_ms() const noexcept { return (*this)[Stage::visualization] + (*this)[Stage::encode]; }
};

std::string resolution_tag(int width, int height);

// Wall-clock stage timer on a single monotonic source. The total runs from
// construction (or restart()) to snapshot().
class Instrument {
public:
    using Clock = std::chrono::steady_clock;

    Instrument() noexcept : start_(Clock::now()) {}

    void restart() noexcept {
        start_ = Clock::now();
        stages_ = {};
    }

    template <typename F>
    decltype(auto) measure(Stage stage, F&& fn) {
        struct Guard {
            Instrument& self;
            Stage stage;
            Clock::time_point begin;
            ~Guard() { self.add(stage, std::chrono::duration<double, std::milli>(Clock::now() - begin).count()); }
        } guard{*this, stage, Clock::now()};
        return std::forward<F>(fn)();
    }

    void add(Stage stage, double ms) noexcept { stages_[static_cast<std::size_t>(stage)] += ms; }

    double elapsed_ms() const noexcept {
        return std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
    }

    TimingBreakdown snapshot(std::string resolution = {}) const;

private:
    Clock::time_point start_;
    std::array<double, kStageCount> stages_{};
};

struct StageShareRow {
    std::string resolution;
    std::size_t count = 0;
    double mean_total_ms = 0.0;
    std::array<double, kStageCount> mean_stage_ms{};
    std::array<double, kStageCount> stage_share{};  // stage mean / total mean
    double inference_share = 0.0;      // inference / (inference + visualization)
    double visualization_share = 0.0;  // visualization / (inference + visualization)
};

struct LatencyStats {
    std::size_t count = 0;
    double mean = 0.0, min = 0.0, max = 0.0, p50 = 0.0, p95 = 0.0, p99 = 0.0;
    std::size_t under_1s = 0;
    std::size_t at_least_1s = 0;
    std::vector<StageShareRow> by_resolution;  // sorted by tag
};

// Nearest-rank percentile of an ascending-sorted list: element ceil(p/100 * n).
double nearest_rank(std::span<const double> sorted, double percentile);

// Throws Errc::invalid_argument on an empty list.
LatencyStats summarize(std::span<const TimingBreakdown> breakdowns);

StageShareRow stage_shares(const std::string& tag, std::span<const TimingBreakdown> breakdowns);

nlohmann::json to_json(const TimingBreakdown& t);
TimingBreakdown timing_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LatencyStats& s);

void append_jsonl(const std::string& path, std::span<const TimingBreakdown> breakdowns);
std::vector<TimingBreakdown> read_jsonl(const std::string& path);
std::string stats_csv(const LatencyStats& stats);

}  // namespace ensel
