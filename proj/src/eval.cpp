#include "ensel/eval.hpp"

#include "ensel/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <set>

namespace ensel {

std::size_t ConfusionMatrix::total() const noexcept {
    std::size_t n = 0;
    for (const auto& row : counts)
        for (auto c : row) n += c;
    return n;
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> macro(const std::vector<ClassMetrics>& rows, std::optional<double> ClassMetrics::*field) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (const auto& v = r.*field) {
            sum += *v;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

}  // namespace

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
    const std::size_t c = cm.labels.size();
    MetricsReport r;
    r.samples = cm.total();
    std::size_t trace = 0;
    for (std::size_t i = 0; i < c; ++i) {
        std::size_t predicted = 0, actual = 0;
        for (std::size_t j = 0; j < c; ++j) {
            predicted += cm.counts[j][i];
            actual += cm.counts[i][j];
        }
        const std::size_t tp = cm.counts[i][i];
        trace += tp;
        ClassMetrics m;
        m.label = cm.labels[i];
        m.support = actual;
        m.precision = ratio(tp, predicted);
        m.recall = ratio(tp, actual);
        if (m.precision && m.recall) {
            const double p = *m.precision, q = *m.recall;
            m.f1 = p + q > 0.0 ? 2.0 * p * q / (p + q) : 0.0;
        }
        r.per_class.push_back(std::move(m));
    }
    r.accuracy = r.samples ? static_cast<double>(trace) / static_cast<double>(r.samples) : 0.0;
    r.macro_precision = macro(r.per_class, &ClassMetrics::precision);
    r.macro_recall = macro(r.per_class, &ClassMetrics::recall);
    r.macro_f1 = macro(r.per_class, &ClassMetrics::f1);
    return r;
}

Evaluation compute_metrics(std::span<const std::string> predictions, std::span<const std::string> truths,
                           std::span<const std::string> label_set) {
    if (predictions.size() != truths.size())
        throw Error(Errc::invalid_argument, "compute_metrics: predictions and truths differ in length");
    if (predictions.empty()) throw Error(Errc::invalid_argument, "compute_metrics: no samples");
    Evaluation e;
    e.confusion.labels.assign(label_set.begin(), label_set.end());
    const std::size_t c = label_set.size();
    e.confusion.counts.assign(c, std::vector<std::size_t>(c, 0));
    auto index = [&](const std::string& label) {
        const auto it = std::find(label_set.begin(), label_set.end(), label);
        if (it == label_set.end()) throw Error(Errc::invalid_argument, "compute_metrics: unknown label '" + label + "'");
        return static_cast<std::size_t>(it - label_set.begin());
    };
    for (std::size_t i = 0; i < truths.size(); ++i) ++e.confusion.counts[index(truths[i])][index(predictions[i])];
    e.report = metrics_from_confusion(e.confusion);
    return e;
}

std::string ComparisonEntry::combination() const {
    std::string out;
    for (std::size_t i = 0; i < config.members.size(); ++i) {
        if (i) out += " + ";
        out += config.members[i];
    }
    return out;
}

ComparisonReport compare_models(std::span<const ComparisonEntry> entries, std::span<const LabeledSample> test_set,
                                const ModelRegistry& registry) {
    if (entries.empty()) throw Error(Errc::invalid_argument, "compare_models: no entries");
    if (test_set.empty()) throw Error(Errc::invalid_argument, "compare_models: empty test set");
    ComparisonReport report;
    for (const auto& entry : entries) {
        ComparisonRow row{entry.name, entry.model_type(), entry.combination(), {}, {}};
        std::vector<std::string> truths;
        std::set<std::string> labels;
        try {
            for (const auto& s : test_set) {
                row.predictions.push_back(diagnose(s.image, entry.config, registry).final_label);
                truths.push_back(s.label);
                labels.insert(s.label);
                labels.insert(row.predictions.back());
            }
        } catch (const Error& e) {
            throw Error(e.code(), entry.name + ": " + e.what());
        }
        const std::vector<std::string> label_set(labels.begin(), labels.end());
        row.evaluation = compute_metrics(row.predictions, truths, label_set);
        report.rows.push_back(std::move(row));
    }
    return report;
}

namespace {

std::string fmt(const std::optional<double>& v) {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::string ComparisonReport::csv() const {
    std::string out = "name,model_type,combination,precision,recall,f1,accuracy,samples,averaging\n";
    for (const auto& r : rows) {
        const auto& m = r.evaluation.report;
        out += r.name + "," + r.model_type + "," + r.combination + "," + fmt(m.macro_precision) + "," +
               fmt(m.macro_recall) + "," + fmt(m.macro_f1) + "," + fmt(m.accuracy) + "," + std::to_string(m.samples) +
               "," + m.averaging + "\n";
    }
    return out;
}

nlohmann::json ComparisonReport::json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        const auto& m = r.evaluation.report;
        nlohmann::json per_class = nlohmann::json::array();
        for (const auto& c : m.per_class)
            per_class.push_back({{"label", c.label},
                                 {"support", c.support},
                                 {"precision", opt_json(c.precision)},
                                 {"recall", opt_json(c.recall)},
                                 {"f1", opt_json(c.f1)}});
        rows_json.push_back({{"name", r.name},
                             {"model_type", r.model_type},
                             {"combination", r.combination},
                             {"precision", opt_json(m.macro_precision)},
                             {"recall", opt_json(m.macro_recall)},
                             {"f1", opt_json(m.macro_f1)},
                             {"accuracy", m.accuracy},
                             {"samples", m.samples},
                             {"averaging", m.averaging},
                             {"per_class", per_class}});
    }
    return {{"rows", rows_json}};
}

}  // namespace ensel
