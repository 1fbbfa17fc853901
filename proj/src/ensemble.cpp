#include "ensel/ensemble.hpp"

#include "ensel/classify.hpp"
#include "ensel/detect.hpp"
#include "ensel/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>

namespace ensel {

using nlohmann::json;

std::string to_string(AlignmentPolicy policy) {
    return policy == AlignmentPolicy::intersection ? "intersection" : "union-zero-fill";
}

AlignmentPolicy parse_alignment(const std::string& text) {
    if (text == "intersection") return AlignmentPolicy::intersection;
    if (text == "union-zero-fill" || text == "union_zero_fill" || text == "union") return AlignmentPolicy::union_zero_fill;
    throw Error(Errc::invalid_argument, "unknown alignment policy '" + text + "'");
}

void validate(const EnsembleConfig& config, const ModelRegistry& registry) {
    if (config.members.empty()) throw Error(Errc::invalid_argument, "ensemble needs at least one member");
    if (std::set<std::string>(config.members.begin(), config.members.end()).size() != config.members.size())
        throw Error(Errc::invalid_argument, "ensemble members must be distinct");
    if (!(config.overlay_alpha >= 0.0 && config.overlay_alpha <= 1.0))
        throw Error(Errc::invalid_argument, "overlay alpha must lie in [0, 1]");
    if (!(config.threshold > 0.0 && config.threshold < 1.0))
        throw Error(Errc::invalid_argument, "detection threshold must lie in (0, 1)");
    if (config.min_area < 0) throw Error(Errc::invalid_argument, "min_area must be >= 0");
    if (!config.weights.empty() && config.weights.size() != config.members.size())
        throw Error(Errc::invalid_argument, "weights must match the member count");
    for (const auto& m : config.members) registry.classifier(m);
    registry.detector(config.detector);
}

EnsembleConfig config_from_json(const json& j) {
    EnsembleConfig c;
    try {
        c.id = j.value("id", c.id);
        c.members = j.at("members").get<std::vector<std::string>>();
        c.weights = j.value("weights", std::vector<double>{});
        c.alignment = parse_alignment(j.value("alignment", std::string("intersection")));
        c.overlay_alpha = j.value("overlay_alpha", c.overlay_alpha);
        if (j.contains("overlay_color")) {
            const auto rgb = j.at("overlay_color").get<std::vector<int>>();
            if (rgb.size() != 3) throw Error(Errc::invalid_argument, "overlay_color needs 3 components");
            for (int i = 0; i < 3; ++i) c.overlay_color[i] = static_cast<std::uint8_t>(std::clamp(rgb[i], 0, 255));
        }
        c.detector = j.at("detector").get<std::string>();
        c.threshold = j.value("threshold", c.threshold);
        c.min_area = j.value("min_area", c.min_area);
        c.model_dir = j.value("model_dir", std::string{});
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, std::string("bad ensemble config: ") + e.what());
    }
    return c;
}

json to_json(const EnsembleConfig& c) {
    json j = {{"id", c.id},
              {"members", c.members},
              {"alignment", to_string(c.alignment)},
              {"overlay_alpha", c.overlay_alpha},
              {"overlay_color", {c.overlay_color[0], c.overlay_color[1], c.overlay_color[2]}},
              {"detector", c.detector},
              {"threshold", c.threshold},
              {"min_area", c.min_area}};
    if (!c.weights.empty()) j["weights"] = c.weights;
    if (!c.model_dir.empty()) j["model_dir"] = c.model_dir;
    return j;
}

EnsembleConfig load_ensemble_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::missing_file, "cannot open ensemble config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, "ensemble config is not valid JSON: " + std::string(e.what()));
    }
    auto c = config_from_json(j);
    if (!c.model_dir.empty()) {
        std::filesystem::path dir = c.model_dir;
        if (dir.is_relative()) dir = std::filesystem::path(path).parent_path() / dir;
        c.model_dir = dir.lexically_normal().string();
    }
    return c;
}

std::vector<ClassDistribution> align_classes(std::span<const ClassDistribution> dists, AlignmentPolicy policy) {
    if (dists.empty()) throw Error(Errc::invalid_argument, "align_classes: no distributions");
    std::vector<std::string> common;
    if (policy == AlignmentPolicy::intersection) {
        for (const auto& label : dists[0].labels()) {
            const bool shared = std::all_of(dists.begin() + 1, dists.end(),
                                            [&](const ClassDistribution& d) { return d.index_of(label).has_value(); });
            if (shared) common.push_back(label);
        }
        if (common.empty()) throw Error(Errc::alignment, "members share no class labels");
    } else {
        std::set<std::string> seen;
        for (const auto& d : dists)
            for (const auto& label : d.labels())
                if (seen.insert(label).second) common.push_back(label);
    }

    std::vector<ClassDistribution> out;
    out.reserve(dists.size());
    for (const auto& d : dists) {
        if (d.labels() == common) {
            out.push_back(d);
            continue;
        }
        std::vector<double> p(common.size());
        double mass = 0.0;
        for (std::size_t i = 0; i < common.size(); ++i) {
            p[i] = d.probability_of(common[i]);
            mass += p[i];
        }
        if (!(mass > 0.0))
            throw Error(Errc::degenerate_distribution, "a member puts zero mass on the shared label set");
        for (auto& v : p) v /= mass;
        out.emplace_back(common, std::move(p));
    }
    return out;
}

Vote soft_vote(std::span<const ClassDistribution> dists, std::span<const double> weights) {
    if (dists.empty()) throw Error(Errc::precondition, "soft_vote: no distributions");
    const auto& labels = dists[0].labels();
    for (const auto& d : dists)
        if (d.labels() != labels) throw Error(Errc::precondition, "soft_vote: label sets differ; align first");
    if (!weights.empty() && weights.size() != dists.size())
        throw Error(Errc::precondition, "soft_vote: weight count mismatch");
    double wsum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw Error(Errc::precondition, "soft_vote: weights must be >= 0");
        wsum += w;
    }
    if (!weights.empty() && !(wsum > 0.0)) throw Error(Errc::precondition, "soft_vote: weights sum to zero");

    std::vector<double> fused(labels.size(), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < dists.size(); ++k)
            acc += (weights.empty() ? 1.0 : weights[k]) * dists[k].probability(i);
        fused[i] = acc / (weights.empty() ? static_cast<double>(dists.size()) : wsum);
    }
    Vote v{ClassDistribution(labels, std::move(fused)), 0};
    v.decision = v.fused.argmax();
    return v;
}

ClassDistribution combine_evidence(const ClassDistribution& whole, std::span<const ClassDistribution> boxes) {
    if (boxes.empty()) return whole;
    std::vector<double> p(whole.size());
    for (std::size_t i = 0; i < whole.size(); ++i) {
        double box_mean = 0.0;
        for (const auto& b : boxes) {
            if (b.labels() != whole.labels()) throw Error(Errc::precondition, "combine_evidence: label sets differ");
            box_mean += b.probability(i);
        }
        box_mean /= static_cast<double>(boxes.size());
        p[i] = 0.5 * whole.probability(i) + 0.5 * box_mean;
    }
    return ClassDistribution(whole.labels(), std::move(p));
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace {

template <typename F>
decltype(auto) in_stage(const char* stage, F&& fn) {
    try {
        return std::forward<F>(fn)();
    } catch (const PipelineError&) {
        throw;
    } catch (const std::exception& e) {
        throw PipelineError(stage, e.what());
    }
}

}  // namespace

Diagnosis diagnose(const ImageU8& image, const EnsembleConfig& config, const ModelRegistry& registry) {
    Instrument clock;
    return diagnose(image, config, registry, clock);
}

Diagnosis diagnose(const ImageU8& image, const EnsembleConfig& config, const ModelRegistry& registry,
                   Instrument& clock) {
    in_stage("config", [&] { validate(config, registry); });
    if (image.empty()) throw PipelineError("input", "empty image");
    const auto& detector = registry.detector(config.detector);
    std::vector<const ClassifierModel*> members;
    for (const auto& id : config.members) members.push_back(&registry.classifier(id));

    Diagnosis d;
    d.config_id = config.id;
    d.members = config.members;
    d.created_at = utc_timestamp();

    const auto loc = clock.measure(Stage::detect_inference, [&] {
        return in_stage("detect", [&] { return locate_lesions(image, detector, config.threshold, config.min_area); });
    });

    std::vector<ClassDistribution> whole_raw;
    std::vector<std::vector<ClassDistribution>> box_raw(loc.boxes.size());
    clock.measure(Stage::classify_inference, [&] {
        in_stage("classify", [&] {
            const ImageU8 whole = resize_bilinear(image, kClassifierInput, kClassifierInput);
            for (const auto* m : members) whole_raw.push_back(classify(*m, whole));
            for (std::size_t b = 0; b < loc.boxes.size(); ++b) {
                const ImageU8 patch = rescale_crop(image, loc.boxes[b]);
                for (const auto* m : members) box_raw[b].push_back(classify(*m, patch));
            }
        });
    });

    clock.measure(Stage::vote, [&] {
        in_stage("vote", [&] {
            d.whole_image = align_classes(whole_raw, config.alignment);
            const Vote whole_vote = soft_vote(d.whole_image, config.weights);
            std::vector<ClassDistribution> box_votes;
            for (std::size_t b = 0; b < loc.boxes.size(); ++b) {
                BoxFinding f;
                f.box = loc.boxes[b];
                f.per_model = align_classes(box_raw[b], config.alignment);
                const Vote v = soft_vote(f.per_model, config.weights);
                f.fused = v.fused;
                f.box.label = v.label();
                box_votes.push_back(v.fused);
                d.boxes.push_back(std::move(f));
            }
            d.fused = combine_evidence(whole_vote.fused, box_votes);
            for (std::size_t m = 0; m < members.size(); ++m) {
                std::vector<ClassDistribution> member_boxes;
                for (const auto& f : d.boxes) member_boxes.push_back(f.per_model[m]);
                d.per_model.push_back(combine_evidence(d.whole_image[m], member_boxes));
            }
            const auto best = d.fused.argmax();
            d.final_label = d.fused.label(best);
            d.final_probability = d.fused.probability(best);
        });
    });

    clock.measure(Stage::visualization, [&] {
        in_stage("visualize", [&] {
            d.lesion_mask = lesion_mask(loc.objectness, config.threshold, image.height, image.width);
            d.overlay = alpha_blend(image, config.overlay_color, d.lesion_mask, config.overlay_alpha);
        });
    });

    d.timing = clock.snapshot(resolution_tag(image.width, image.height));
    return d;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += table[v & 63];
    }
    if (i + 1 == bytes.size()) {
        const std::uint32_t v = bytes[i] << 16;
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

namespace {

json distribution_json(const ClassDistribution& d) {
    json j = json::object();
    for (std::size_t i = 0; i < d.size(); ++i) j[d.label(i)] = d.probability(i);
    return j;
}

}  // namespace

json diagnosis_json(const Diagnosis& d, bool include_overlay) {
    json per_model = json::object(), whole = json::object();
    for (std::size_t m = 0; m < d.members.size(); ++m) {
        if (m < d.per_model.size()) per_model[d.members[m]] = distribution_json(d.per_model[m]);
        if (m < d.whole_image.size()) whole[d.members[m]] = distribution_json(d.whole_image[m]);
    }
    json boxes = json::array();
    for (const auto& f : d.boxes) {
        boxes.push_back({{"x0", f.box.x0},
                         {"y0", f.box.y0},
                         {"x1", f.box.x1},
                         {"y1", f.box.y1},
                         {"score", f.box.score},
                         {"label", f.box.label.value_or("")},
                         {"distribution", distribution_json(f.fused)}});
    }
    json timing = json::object();
    for (auto s : kAllStages) timing[std::string(stage_name(s))] = d.timing[s];
    timing["total"] = d.timing.total_ms;

    json j = {{"id", d.request_id},
              {"config", d.config_id},
              {"final", {{"label", d.final_label}, {"probability", d.final_probability}}},
              {"distribution", distribution_json(d.fused)},
              {"per_model", per_model},
              {"whole_image", whole},
              {"boxes", boxes},
              {"resolution", d.timing.resolution},
              {"timing_ms", timing},
              {"evidence_rule", d.evidence_rule},
              {"created_at", d.created_at}};
    if (include_overlay) j["overlay_png_base64"] = base64_encode(encode(d.overlay, ImageFormat::png));
    return j;
}

PipelineRun run_pipeline(std::span<const std::uint8_t> image_bytes, const EnsembleConfig& config,
                         const ModelRegistry& registry) {
    Instrument clock;
    PipelineRun run;
    run.input = clock.measure(Stage::decode, [&] { return decode_any(image_bytes); });
    run.diagnosis = diagnose(run.input, config, registry, clock);
    run.overlay_png = clock.measure(Stage::encode, [&] {
        return in_stage("encode", [&] { return encode(run.diagnosis.overlay, ImageFormat::png); });
    });
    run.diagnosis.timing = clock.snapshot(resolution_tag(run.input.width, run.input.height));
    return run;
}

std::vector<ResolutionGroupResult> resolution_experiment(std::span<const ResolutionGroup> groups, const TimedRun& run) {
    std::vector<ResolutionGroupResult> results;
    for (const auto& g : groups) {
        if (g.encoded_images.empty())
            throw Error(Errc::invalid_argument, "resolution group '" + g.name + "' has no images");
        ResolutionGroupResult r;
        r.name = g.name;
        for (const auto& bytes : g.encoded_images) r.runs.push_back(run(bytes));
        r.shares = stage_shares(g.name, r.runs);
        results.push_back(std::move(r));
    }
    return results;
}

std::vector<ResolutionGroupResult> resolution_experiment(std::span<const ResolutionGroup> groups,
                                                         const EnsembleConfig& config, const ModelRegistry& registry) {
    return resolution_experiment(groups, [&](std::span<const std::uint8_t> bytes) {
        return run_pipeline(bytes, config, registry).diagnosis.timing;
    });
}

}  // namespace ensel
