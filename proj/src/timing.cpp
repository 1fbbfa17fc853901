#include "ensel/timing.hpp"

#include "ensel/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ensel {

using nlohmann::json;

std::string_view stage_name(Stage stage) noexcept {
    switch (stage) {
        case Stage::decode: return "decode";
        case Stage::detect_inference: return "detect";
        case Stage::classify_inference: return "classify";
        case Stage::vote: return "vote";
        case Stage::cam: return "cam";
        case Stage::visualization: return "visualize";
        case Stage::encode: return "encode";
    }
    return "unknown";
}

std::string resolution_tag(int width, int height) { return std::to_string(width) + "x" + std::to_string(height); }

TimingBreakdown Instrument::snapshot(std::string resolution) const {
    TimingBreakdown t;
    t.stage_ms = stages_;
    t.total_ms = elapsed_ms();
    t.resolution = std::move(resolution);
    return t;
}

double nearest_rank(std::span<const double> sorted, double percentile) {
    if (sorted.empty()) throw Error(Errc::invalid_argument, "percentile of an empty list");
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

StageShareRow stage_shares(const std::string& tag, std::span<const TimingBreakdown> breakdowns) {
    StageShareRow row;
    row.resolution = tag;
    row.count = breakdowns.size();
    if (breakdowns.empty()) return row;
    double inference = 0.0, visual = 0.0;
    for (const auto& b : breakdowns) {
        row.mean_total_ms += b.total_ms;
        for (std::size_t s = 0; s < kStageCount; ++s) row.mean_stage_ms[s] += b.stage_ms[s];
        inference += b.inference_ms();
        visual += b.visualization_ms();
    }
    const double n = static_cast<double>(breakdowns.size());
    row.mean_total_ms /= n;
    for (std::size_t s = 0; s < kStageCount; ++s) {
        row.mean_stage_ms[s] /= n;
        row.stage_share[s] = row.mean_total_ms > 0 ? row.mean_stage_ms[s] / row.mean_total_ms : 0.0;
    }
    const double both = inference + visual;
    row.inference_share = both > 0 ? inference / both : 0.0;
    row.visualization_share = both > 0 ? visual / both : 0.0;
    return row;
}

LatencyStats summarize(std::span<const TimingBreakdown> breakdowns) {
    if (breakdowns.empty()) throw Error(Errc::invalid_argument, "summarize: no timing records");
    LatencyStats s;
    s.count = breakdowns.size();
    std::vector<double> totals;
    totals.reserve(s.count);
    std::map<std::string, std::vector<TimingBreakdown>> groups;
    for (const auto& b : breakdowns) {
        totals.push_back(b.total_ms);
        (b.total_ms < 1000.0 ? s.under_1s : s.at_least_1s) += 1;
        groups[b.resolution].push_back(b);
    }
    std::sort(totals.begin(), totals.end());
    double sum = 0.0;
    for (double t : totals) sum += t;
    s.mean = sum / static_cast<double>(totals.size());
    s.min = totals.front();
    s.max = totals.back();
    s.p50 = nearest_rank(totals, 50);
    s.p95 = nearest_rank(totals, 95);
    s.p99 = nearest_rank(totals, 99);
    for (const auto& [tag, runs] : groups) s.by_resolution.push_back(stage_shares(tag, runs));
    return s;
}

json to_json(const TimingBreakdown& t) {
    json stages = json::object();
    for (auto s : kAllStages) stages[std::string(stage_name(s))] = t[s];
    return {{"resolution", t.resolution}, {"stages_ms", stages}, {"total_ms", t.total_ms}};
}

TimingBreakdown timing_from_json(const json& j) {
    TimingBreakdown t;
    t.resolution = j.value("resolution", "");
    t.total_ms = j.at("total_ms").get<double>();
    const auto& stages = j.at("stages_ms");
    for (auto s : kAllStages) t[s] = stages.value(std::string(stage_name(s)), 0.0);
    return t;
}

json to_json(const LatencyStats& s) {
    json rows = json::array();
    for (const auto& r : s.by_resolution) {
        json shares = json::object();
        for (auto st : kAllStages) shares[std::string(stage_name(st))] = r.stage_share[static_cast<std::size_t>(st)];
        rows.push_back({{"resolution", r.resolution},
                        {"count", r.count},
                        {"mean_total_ms", r.mean_total_ms},
                        {"stage_share", shares},
                        {"inference_share", r.inference_share},
                        {"visualization_share", r.visualization_share}});
    }
    return {{"count", s.count}, {"mean_ms", s.mean},   {"min_ms", s.min},
            {"max_ms", s.max},  {"p50_ms", s.p50},     {"p95_ms", s.p95},
            {"p99_ms", s.p99},  {"under_1s", s.under_1s}, {"at_least_1s", s.at_least_1s},
            {"by_resolution", rows}};
}

void append_jsonl(const std::string& path, std::span<const TimingBreakdown> breakdowns) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error(Errc::io, "cannot open timing log " + path);
    for (const auto& b : breakdowns) out << to_json(b).dump() << '\n';
    if (!out) throw Error(Errc::io, "short write to timing log " + path);
}

std::vector<TimingBreakdown> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io, "cannot open timing log " + path);
    std::vector<TimingBreakdown> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(timing_from_json(json::parse(line)));
    }
    return out;
}

std::string stats_csv(const LatencyStats& s) {
    std::ostringstream os;
    os << "resolution,count,mean_total_ms";
    for (auto st : kAllStages) os << ",share_" << stage_name(st);
    os << ",inference_share,visualization_share\n";
    for (const auto& r : s.by_resolution) {
        os << r.resolution << ',' << r.count << ',' << r.mean_total_ms;
        for (double v : r.stage_share) os << ',' << v;
        os << ',' << r.inference_share << ',' << r.visualization_share << '\n';
    }
    os << "all," << s.count << ',' << s.mean << '\n';
    return os.str();
}

}  // namespace ensel
