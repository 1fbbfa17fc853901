#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ensel {

// Ordered (label, probability) pairs. Labels are unique; probabilities lie
// in [0, 1] and sum to 1 within 1e-9.
class ClassDistribution {
public:
    ClassDistribution() = default;
    // Validates the invariants; throws Errc::degenerate_distribution or
    // Errc::invalid_argument.
    ClassDistribution(std::vector<std::string> labels, std::vector<double> probabilities);

    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::vector<double>& probabilities() const noexcept { return probs_; }
    const std::string& label(std::size_t i) const { return labels_.at(i); }
    double probability(std::size_t i) const { return probs_.at(i); }

    std::optional<std::size_t> index_of(const std::string& label) const noexcept;
    // 0 for labels not present.
    double probability_of(const std::string& label) const noexcept;

    // Largest probability; ties go to the lexicographically smallest label.
    std::size_t argmax() const;

    friend bool operator==(const ClassDistribution&, const ClassDistribution&) = default;

private:
    std::vector<std::string> labels_;
    std::vector<double> probs_;
};

inline constexpr double kDistributionTolerance = 1e-9;

}  // namespace ensel
