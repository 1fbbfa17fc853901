#pragma once

// Classification metrics (macro-averaged) and single-model versus ensemble
// comparison reports evaluated at image level.

#include "ensel/ensemble.hpp"
#include "ensel/train.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ensel {

// Rows are ground truth, columns are predictions, both in `labels` order.
struct ConfusionMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<std::size_t>> counts;

    std::size_t at(std::size_t truth, std::size_t predicted) const { return counts.at(truth).at(predicted); }
    std::size_t total() const noexcept;
};

// An empty optional marks a 0/0 metric.
struct ClassMetrics {
    std::string label;
    std::size_t support = 0;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    std::optional<double> macro_precision;
    std::optional<double> macro_recall;
    std::optional<double> macro_f1;
    double accuracy = 0.0;
    std::size_t samples = 0;
    std::string averaging = "macro";
};

struct Evaluation {
    ConfusionMatrix confusion;
    MetricsReport report;
};

MetricsReport metrics_from_confusion(const ConfusionMatrix& confusion);

// Throws invalid_argument on length mismatch, empty input or labels outside
// the label set.
Evaluation compute_metrics(std::span<const std::string> predictions, std::span<const std::string> truths,
                           std::span<const std::string> label_set);

struct ComparisonEntry {
    std::string name;
    EnsembleConfig config;

    std::string model_type() const { return config.members.size() > 1 ? "ensemble" : "single"; }
    std::string combination() const;  // member ids joined by " + "
};

struct ComparisonRow {
    std::string name;
    std::string model_type;
    std::string combination;
    std::vector<std::string> predictions;
    Evaluation evaluation;
};

struct ComparisonReport {
    std::vector<ComparisonRow> rows;

    std::string csv() const;
    nlohmann::json json() const;
};

// Runs every entry's full diagnose path over the test set, in entry order.
ComparisonReport compare_models(std::span<const ComparisonEntry> entries, std::span<const LabeledSample> test_set,
                                const ModelRegistry& registry);

}  // namespace ensel
