/**
 * @file invariance_enforcer.hpp
 * @brief Makes any explainer invariant by averaging it over group elements.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "eqxai/robustness_metrics.hpp"
#include "eqxai/symmetry.hpp"

namespace eqxai {

enum class EnforceMode { full_group, sampled_without_replacement };

/// e_inv(x) = (1/n_inv) sum_i e(G_i x). The elements G_i are drawn once and
/// shared by every input; with the full group the result is exactly invariant.
class EnforcedExplainer {
public:
    EnforcedExplainer(Explainer base, SymmetryGroup group, std::size_t n_inv, std::uint64_t seed, EnforceMode mode);

    Explanation operator()(const Signal& x) const;

    const std::vector<GroupElement>& elements() const { return elements_; }
    EnforceMode mode() const { return mode_; }

private:
    Explainer base_;
    SymmetryGroup group_;
    EnforceMode mode_;
    std::vector<GroupElement> elements_;
};

/// Full-group aggregation when n_inv equals an enumerable group's order,
/// otherwise a uniform n_inv-subset drawn without replacement.
EnforcedExplainer enforce(Explainer base, const SymmetryGroup& group, std::size_t n_inv, std::uint64_t seed = 0);

/// Thresholds aggregated concept scores at zero into a presence vector.
Explanation threshold_concepts(const Explanation& scores);

} // namespace eqxai
