#pragma once

// Soft-voting ensemble and the full diagnosis pipeline:
// detect -> per box: rescale + classify with every member -> align -> vote;
// the whole image is rescaled and classified by every member as well, and
// the image-level result averages the whole-image vote with the mean of the
// per-box votes (equal weight) when boxes exist.

#include "ensel/distribution.hpp"
#include "ensel/imaging.hpp"
#include "ensel/registry.hpp"
#include "ensel/timing.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ensel {

enum class AlignmentPolicy { intersection, union_zero_fill };

std::string to_string(AlignmentPolicy policy);
AlignmentPolicy parse_alignment(const std::string& text);

inline constexpr double kDefaultOverlayAlpha = 0.4;
inline constexpr Rgb kDefaultOverlayColor = {255, 0, 0};

struct EnsembleConfig {
    std::string id = "default";
    std::vector<std::string> members;
    std::vector<double> weights;  // empty = equal weights
    AlignmentPolicy alignment = AlignmentPolicy::intersection;
    double overlay_alpha = kDefaultOverlayAlpha;
    Rgb overlay_color = kDefaultOverlayColor;
    std::string detector;
    double threshold = 0.5;
    int min_area = 16;
    std::string model_dir;  // optional; resolved relative to the config file
};

// Throws Errc::invalid_argument / unknown_id / role_mismatch.
void validate(const EnsembleConfig& config, const ModelRegistry& registry);

EnsembleConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EnsembleConfig& config);
// Reads a config file; a relative model_dir is resolved against the file's
// directory.
EnsembleConfig load_ensemble_config(const std::string& path);

std::vector<ClassDistribution> align_classes(std::span<const ClassDistribution> dists, AlignmentPolicy policy);

struct Vote {
    ClassDistribution fused;
    std::size_t decision = 0;

    const std::string& label() const { return fused.label(decision); }
    double probability() const { return fused.probability(decision); }
};

// fused_i = sum_k w_k p_ki / sum_k w_k; decision = argmax with ties to the
// lexicographically smallest label. Throws Errc::precondition on label-set
// mismatch or bad weights.
Vote soft_vote(std::span<const ClassDistribution> dists, std::span<const double> weights = {});

struct BoxFinding {
    BBox box;
    ClassDistribution fused;
    std::vector<ClassDistribution> per_model;  // aligned, member order
};

inline constexpr const char* kEvidenceRule =
    "image = mean(whole-image vote, mean of per-box votes) when boxes exist, else whole-image vote";

struct Diagnosis {
    std::string request_id;
    std::string config_id;
    std::string final_label;
    double final_probability = 0.0;
    ClassDistribution fused;
    std::vector<std::string> members;
    std::vector<ClassDistribution> whole_image;  // aligned, member order
    std::vector<ClassDistribution> per_model;    // member evidence, same two-stage rule
    std::vector<BoxFinding> boxes;
    Heatmap lesion_mask;
    ImageU8 overlay;
    TimingBreakdown timing;
    std::string created_at;
    std::string evidence_rule = kEvidenceRule;
};

Diagnosis diagnose(const ImageU8& image, const EnsembleConfig& config, const ModelRegistry& registry);
// Records detect / classify / vote / visualization stages into `clock`.
Diagnosis diagnose(const ImageU8& image, const EnsembleConfig& config, const ModelRegistry& registry,
                   Instrument& clock);

// Fused distribution combining a whole-image vote with per-box votes.
ClassDistribution combine_evidence(const ClassDistribution& whole, std::span<const ClassDistribution> boxes);

std::string utc_timestamp();

// Serialised result: {id, final, distribution, per_model, boxes, timing_ms, ...}.
// The overlay is embedded as base64 PNG when requested.
nlohmann::json diagnosis_json(const Diagnosis& d, bool include_overlay);

struct PipelineRun {
    Diagnosis diagnosis;
    std::vector<std::uint8_t> overlay_png;
    ImageU8 input;
};

// decode -> diagnose -> encode overlay as PNG, all stages timed; the
// breakdown is stored in diagnosis.timing.
PipelineRun run_pipeline(std::span<const std::uint8_t> image_bytes, const EnsembleConfig& config,
                         const ModelRegistry& registry);

struct ResolutionGroup {
    std::string name;
    std::vector<std::vector<std::uint8_t>> encoded_images;
};

struct ResolutionGroupResult {
    std::string name;
    StageShareRow shares;
    std::vector<TimingBreakdown> runs;
};

using TimedRun = std::function<TimingBreakdown(std::span<const std::uint8_t>)>;

// Throws Errc::invalid_argument if any group is empty.
std::vector<ResolutionGroupResult> resolution_experiment(std::span<const ResolutionGroup> groups, const TimedRun& run);
std::vector<ResolutionGroupResult> resolution_experiment(std::span<const ResolutionGroup> groups,
                                                         const EnsembleConfig& config, const ModelRegistry& registry);

std::string base64_encode(std::span<const std::uint8_t> bytes);

}  // namespace ensel
