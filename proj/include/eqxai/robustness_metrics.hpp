/**
 * @file robustness_metrics.hpp
 * @brief Explanation invariance and equivariance scores, model invariance,
 * Monte Carlo error bounds and the sensitivity metric.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eqxai/attribution.hpp"
#include "eqxai/symmetry.hpp"

namespace eqxai {

enum class SimilarityKind { cosine, accuracy };

std::string to_string(SimilarityKind kind);

/// cosine: a.b / (|a||b|) with s(0, 0) = 1 and s(0, b) = 0 for b != 0.
/// accuracy: fraction of equal entries.
double similarity(SimilarityKind kind, std::span<const double> a, std::span<const double> b);

enum class EstimatorMode { exact, monte_carlo };

std::string to_string(EstimatorMode mode);
EstimatorMode parse_estimator_mode(std::string_view name);

struct EstimatorConfig {
    EstimatorMode mode = EstimatorMode::exact;
    std::size_t n_samples = 50;  // monte_carlo
    std::uint64_t seed = 0;      // monte_carlo
    std::size_t enumeration_cap = kDefaultEnumerationCap;

    /// Exact when the group can be enumerated, Monte Carlo otherwise.
    static EstimatorConfig automatic(const SymmetryGroup& group, std::size_t n_samples = 50,
                                     std::uint64_t seed = 0);
};

struct MetricEstimate {
    double value = 0.0;
    EstimatorMode mode = EstimatorMode::exact;
    std::size_t n_terms = 0;  // |G| or the number of samples
    std::uint64_t seed = 0;
    /// Deviation t with P(|estimate - exact| >= t) <= 1e-4; zero when exact.
    double hoeffding_t = 0.0;
};

/// Elements a metric averages over: the whole group, or i.i.d. draws with
/// replacement.
std::vector<GroupElement> metric_elements(const SymmetryGroup& group, const EstimatorConfig& config);

using Explainer = std::function<Explanation(const Signal&)>;

/// Mean over g of s(e(g x), e(x)).
MetricEstimate invariance_score(const Explainer& explainer, const SymmetryGroup& group, const Signal& x,
                                SimilarityKind sim = SimilarityKind::cosine, const EstimatorConfig& config = {});

/// Mean over g of s(e(g x), rho'(g) e(x)). Categorical explanations are
/// rejected.
MetricEstimate equivariance_score(const Explainer& explainer, const SymmetryGroup& group, const Signal& x,
                                  OutputAction action = OutputAction::same_as_input,
                                  const EstimatorConfig& config = {});

/// Mean over g of the cosine between softmax(f(g x)) and softmax(f(x)).
MetricEstimate model_invariance_score(const Predictor& f, const SymmetryGroup& group, const Signal& x,
                                      const EstimatorConfig& config = {});

/// 2 exp(-n_test n_samp t^2 / 2)
double hoeffding_bound(double n_test, double n_samp, double t);
/// Smallest t whose bound is at most delta for n averaged terms.
double hoeffding_deviation(double n_terms, double delta = 1e-4);

/// Largest |e(x) - e(x')|_2 over n sampled x' with |x' - x|_inf <= epsilon.
double sensitivity_max(const Explainer& explainer, const Signal& x, double epsilon = 0.02,
                       std::size_t n_perturbations = 10, std::uint64_t seed = 0);

/// Pearson correlation of paired values.
double correlate(std::span<const double> a, std::span<const double> b);

struct Summary {
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double ci_low = 0.0;   // 95% normal approximation
    double ci_high = 0.0;
    double min = 0.0;
    double max = 0.0;
};

Summary summarize(std::span<const double> values);

} // namespace eqxai
