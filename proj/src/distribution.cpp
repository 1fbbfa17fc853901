#include "ensel/distribution.hpp"

#include "ensel/error.hpp"

#include <cmath>
#include <set>

namespace ensel {

ClassDistribution::ClassDistribution(std::vector<std::string> labels, std::vector<double> probabilities)
    : labels_(std::move(labels)), probs_(std::move(probabilities)) {
    if (labels_.size() != probs_.size())
        throw Error(Errc::invalid_argument, "distribution: label/probability count mismatch");
    if (labels_.empty()) throw Error(Errc::invalid_argument, "distribution: no labels");
    std::set<std::string> seen;
    double sum = 0.0;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (!seen.insert(labels_[i]).second)
            throw Error(Errc::invalid_argument, "distribution: duplicate label '" + labels_[i] + "'");
        const double p = probs_[i];
        if (!std::isfinite(p) || p < 0.0 || p > 1.0 + kDistributionTolerance)
            throw Error(Errc::degenerate_distribution, "distribution: probability out of [0,1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kDistributionTolerance)
        throw Error(Errc::degenerate_distribution, "distribution: probabilities sum to " + std::to_string(sum));
}

std::optional<std::size_t> ClassDistribution::index_of(const std::string& label) const noexcept {
    for (std::size_t i = 0; i < labels_.size(); ++i)
        if (labels_[i] == label) return i;
    return std::nullopt;
}

double ClassDistribution::probability_of(const std::string& label) const noexcept {
    const auto i = index_of(label);
    return i ? probs_[*i] : 0.0;
}

std::size_t ClassDistribution::argmax() const {
    if (empty()) throw Error(Errc::invalid_state, "argmax of an empty distribution");
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs_.size(); ++i) {
        if (probs_[i] > probs_[best] || (probs_[i] == probs_[best] && labels_[i] < labels_[best])) best = i;
    }
    return best;
}

}  // namespace ensel
