#include "eqxai/invariance_enforcer.hpp"

#include "eqxai/errors.hpp"
#include "eqxai/parallel.hpp"

namespace eqxai {

EnforcedExplainer::EnforcedExplainer(Explainer base, SymmetryGroup group, std::size_t n_inv, std::uint64_t seed,
                                     EnforceMode mode)
    : base_(std::move(base)), group_(std::move(group)), mode_(mode) {
    if (!base_) throw InvalidArgumentError("enforce: empty base explainer");
    if (n_inv == 0) throw InvalidArgumentError("enforce: n_inv must be at least 1");
    if (mode == EnforceMode::full_group) {
        elements_ = group_.enumerate();
        if (elements_.size() != n_inv) {
            throw InvalidArgumentError("enforce: full-group mode needs n_inv = |G| = " +
                                       std::to_string(elements_.size()));
        }
    } else {
        const auto order = group_.order();
        if (order && n_inv > *order) {
            throw InvalidArgumentError("enforce: n_inv " + std::to_string(n_inv) + " exceeds the group order " +
                                       std::to_string(*order));
        }
        elements_ = group_.sample(seed, n_inv, true);
    }
}

Explanation EnforcedExplainer::operator()(const Signal& x) const {
    std::vector<Explanation> parts(elements_.size());
    parallel_for(elements_.size(), [&](std::size_t i) { parts[i] = base_(group_.act(elements_[i], x)); });
    Explanation out = parts.front();
    if (out.categorical()) {
        throw InvalidArgumentError("enforce: categorical explanations cannot be averaged; aggregate scores instead");
    }
    for (std::size_t i = 1; i < parts.size(); ++i) {
        if (parts[i].values.size() != out.values.size() || parts[i].kind != out.kind) {
            throw ShapeMismatchError("enforce: base explanations differ in kind or size");
        }
        for (std::size_t j = 0; j < out.values.size(); ++j) out.values[j] += parts[i].values[j];
    }
    const double inv = 1.0 / static_cast<double>(parts.size());
    for (auto& v : out.values) v *= inv;
    return out;
}

EnforcedExplainer enforce(Explainer base, const SymmetryGroup& group, std::size_t n_inv, std::uint64_t seed) {
    const auto order = group.order();
    const bool full = group.enumerable() && order && *order == n_inv;
    return EnforcedExplainer(std::move(base), group, n_inv, seed,
                             full ? EnforceMode::full_group : EnforceMode::sampled_without_replacement);
}

Explanation threshold_concepts(const Explanation& scores) {
    if (scores.kind != ExplanationKind::concept_scores) {
        throw InvalidArgumentError("threshold_concepts needs concept scores, got " + to_string(scores.kind));
    }
    std::vector<double> bits;
    bits.reserve(scores.values.size());
    for (double v : scores.values) bits.push_back(v > 0.0 ? 1.0 : 0.0);
    return Explanation::vector(ExplanationKind::concept_presence, std::move(bits));
}

} // namespace eqxai
