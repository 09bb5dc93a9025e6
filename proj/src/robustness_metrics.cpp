#include "eqxai/robustness_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "eqxai/errors.hpp"
#include "eqxai/parallel.hpp"

namespace eqxai {

namespace {

template <class Term>
MetricEstimate average_over_group(const SymmetryGroup& group, const EstimatorConfig& config, Term term) {
    const auto elements = metric_elements(group, config);
    if (elements.empty()) throw InvalidArgumentError("metric needs at least one group element");
    std::vector<double> terms(elements.size());
    parallel_for(elements.size(), [&](std::size_t i) { terms[i] = term(elements[i]); });
    MetricEstimate out;
    // Summed in element order so results do not depend on scheduling.
    out.value = std::accumulate(terms.begin(), terms.end(), 0.0) / static_cast<double>(terms.size());
    out.mode = config.mode;
    out.n_terms = elements.size();
    out.seed = config.mode == EstimatorMode::monte_carlo ? config.seed : 0;
    out.hoeffding_t =
        config.mode == EstimatorMode::monte_carlo ? hoeffding_deviation(static_cast<double>(elements.size())) : 0.0;
    return out;
}

} // namespace

std::string to_string(SimilarityKind kind) { return kind == SimilarityKind::cosine ? "cosine" : "accuracy"; }

double similarity(SimilarityKind kind, std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeMismatchError("similarity: vectors differ in length");
    if (a.empty()) throw InvalidArgumentError("similarity of empty vectors");
    if (kind == SimilarityKind::accuracy) {
        std::size_t eq = 0;
        for (std::size_t i = 0; i < a.size(); ++i) eq += a[i] == b[i];
        return static_cast<double>(eq) / static_cast<double>(a.size());
    }
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 && bb == 0.0) return 1.0;
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::string to_string(EstimatorMode mode) { return mode == EstimatorMode::exact ? "exact" : "monte_carlo"; }

EstimatorMode parse_estimator_mode(std::string_view name) {
    if (name == "exact") return EstimatorMode::exact;
    if (name == "monte_carlo" || name == "mc") return EstimatorMode::monte_carlo;
    throw InvalidArgumentError("unknown estimator mode '" + std::string(name) + "'");
}

EstimatorConfig EstimatorConfig::automatic(const SymmetryGroup& group, std::size_t n_samples, std::uint64_t seed) {
    EstimatorConfig c;
    c.mode = group.enumerable(c.enumeration_cap) ? EstimatorMode::exact : EstimatorMode::monte_carlo;
    c.n_samples = n_samples;
    c.seed = seed;
    return c;
}

std::vector<GroupElement> metric_elements(const SymmetryGroup& group, const EstimatorConfig& config) {
    if (config.mode == EstimatorMode::exact) return group.enumerate(config.enumeration_cap);
    if (config.n_samples == 0) throw InvalidArgumentError("Monte Carlo estimate needs n_samples >= 1");
    return group.sample(config.seed, config.n_samples, false);
}

MetricEstimate invariance_score(const Explainer& explainer, const SymmetryGroup& group, const Signal& x,
                                SimilarityKind sim, const EstimatorConfig& config) {
    const auto ex = explainer(x);
    return average_over_group(group, config, [&](const GroupElement& g) {
        return similarity(sim, explainer(group.act(g, x)).values, ex.values);
    });
}

MetricEstimate equivariance_score(const Explainer& explainer, const SymmetryGroup& group, const Signal& x,
                                  OutputAction action, const EstimatorConfig& config) {
    const auto ex = explainer(x);
    if (ex.categorical()) {
        throw InvalidArgumentError("equivariance is not defined for categorical explanations");
    }
    return average_over_group(group, config, [&](const GroupElement& g) {
        return similarity(SimilarityKind::cosine, explainer(group.act(g, x)).values,
                          group.act_on_explanation(g, ex, action).values);
    });
}

MetricEstimate model_invariance_score(const Predictor& f, const SymmetryGroup& group, const Signal& x,
                                      const EstimatorConfig& config) {
    const auto px = autodiff::softmax(f.forward(x));
    return average_over_group(group, config, [&](const GroupElement& g) {
        return similarity(SimilarityKind::cosine, autodiff::softmax(f.forward(group.act(g, x))), px);
    });
}

double hoeffding_bound(double n_test, double n_samp, double t) {
    if (!(n_test > 0.0) || !(n_samp > 0.0) || t < 0.0) {
        throw InvalidArgumentError("Hoeffding bound needs positive counts and t >= 0");
    }
    return 2.0 * std::exp(-n_test * n_samp * t * t / 2.0);
}

double hoeffding_deviation(double n_terms, double delta) {
    if (!(n_terms > 0.0) || !(delta > 0.0)) throw InvalidArgumentError("Hoeffding deviation needs n > 0, delta > 0");
    return std::sqrt(2.0 * std::log(2.0 / delta) / n_terms);
}

double sensitivity_max(const Explainer& explainer, const Signal& x, double epsilon, std::size_t n_perturbations,
                       std::uint64_t seed) {
    if (!(epsilon > 0.0)) throw InvalidArgumentError("sensitivity needs epsilon > 0");
    const auto ex = explainer(x).values;
    std::vector<Signal> perturbed(n_perturbations, x);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-epsilon, epsilon);
    for (auto& p : perturbed) {
        for (auto& v : p.values) v += u(rng);
    }
    std::vector<double> dist(n_perturbations);
    parallel_for(n_perturbations, [&](std::size_t i) {
        const auto e = explainer(perturbed[i]).values;
        if (e.size() != ex.size()) throw ShapeMismatchError("sensitivity: explanation size changed");
        double s = 0.0;
        for (std::size_t j = 0; j < e.size(); ++j) s += (e[j] - ex[j]) * (e[j] - ex[j]);
        dist[i] = std::sqrt(s);
    });
    return dist.empty() ? 0.0 : *std::max_element(dist.begin(), dist.end());
}

double correlate(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeMismatchError("correlate: series differ in length");
    if (a.size() < 3) throw InvalidArgumentError("correlate needs at least three pairs");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) throw InvalidArgumentError("correlate: zero variance");
    return sab / std::sqrt(saa * sbb);
}

Summary summarize(std::span<const double> values) {
    Summary s;
    s.n = values.size();
    if (values.empty()) return s;
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    const double half = 1.959963984540054 * s.stddev / std::sqrt(n);
    s.ci_low = s.mean - half;
    s.ci_high = s.mean + half;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    s.min = *lo;
    s.max = *hi;
    return s;
}

} // namespace eqxai
