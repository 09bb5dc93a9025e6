/**
 * @file attribution.hpp
 * @brief Feature attribution: gradient methods and perturbation methods,
 * with explicit baselines.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eqxai/models.hpp"
#include "eqxai/symmetry.hpp"

namespace eqxai {

/// What attribution methods need from a classifier.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual std::size_t classes() const = 0;
    virtual std::vector<double> forward(const Signal& x) const = 0;
    /// d logit[target] / d x.values
    virtual std::vector<double> input_gradient(const Signal& x, std::size_t target) const = 0;
};

class ModelPredictor final : public Predictor {
public:
    explicit ModelPredictor(const Model& model) : model_(&model) {}
    std::size_t classes() const override { return model_->classes(); }
    std::vector<double> forward(const Signal& x) const override { return model_->forward(x); }
    std::vector<double> input_gradient(const Signal& x, std::size_t target) const override {
        return model_->input_gradient(x, target);
    }

private:
    const Model* model_;
};

enum class BaselineMode { zero, constant, random_normal, batch_shuffle };

std::string to_string(BaselineMode mode);
BaselineMode parse_baseline_mode(std::string_view name);

struct Baseline {
    BaselineMode mode = BaselineMode::zero;
    double value = 0.0;  // constant
    double stdev = 1.0;  // random_normal
    std::uint64_t seed = 0;

    /// Zero and constant baselines are fixed by every permutation representation.
    bool invariant() const { return mode == BaselineMode::zero || mode == BaselineMode::constant; }
};

/// Materialises the baseline signal for x. The adjacency of graph inputs is
/// kept; only node features are replaced. batch_shuffle fills each domain
/// point from a randomly chosen reference example.
Signal make_baseline(const Baseline& baseline, const Signal& x, std::span<const Signal> reference = {});

struct AttributionResult {
    Signal scores;
    std::size_t target = 0;
    /// |sum(scores) - (f(x) - f(baseline))|, path methods only.
    std::optional<double> completeness_gap;
};

/// The requested class, or the predicted class when none is given.
std::size_t resolve_target(const Predictor& f, const Signal& x, std::optional<std::size_t> target);

AttributionResult saliency(const Predictor& f, const Signal& x, std::optional<std::size_t> target = {});

/// Right Riemann sum over `steps` points of the straight path from baseline to x.
AttributionResult integrated_gradients(const Predictor& f, const Signal& x, const Signal& baseline,
                                       std::optional<std::size_t> target = {}, std::size_t steps = 64);

/// x * grad f(x): integrated gradients with one step from the zero baseline.
AttributionResult input_x_gradient(const Predictor& f, const Signal& x, std::optional<std::size_t> target = {});

struct GradientShapConfig {
    std::size_t baselines = 8;
    std::size_t points = 8;  // interpolation points per baseline
    /// Standard deviation of the Gaussian baselines; the input's own
    /// standard deviation when unset.
    std::optional<double> stdev;
    std::uint64_t seed = 0;
};

/// Expected gradients over Gaussian baselines and stratified random
/// interpolation points.
AttributionResult gradient_shap(const Predictor& f, const Signal& x, std::optional<std::size_t> target = {},
                                const GradientShapConfig& config = {});

enum class PerturbationScheme { ablation, permutation, occlusion };

struct PerturbationConfig {
    PerturbationScheme scheme = PerturbationScheme::ablation;
    Baseline baseline;             // ablation and occlusion
    std::size_t window = 3;        // occlusion window extent along each axis
    std::span<const Signal> reference;  // permutation
    std::uint64_t seed = 0;        // permutation
};

/// score at point i is f(x) - f(r_i(x)), written to every channel of i.
/// r_i replaces point i (ablation, permutation) or the window centred on i
/// (occlusion, circular) with the baseline.
AttributionResult perturbation_attribution(const Predictor& f, const Signal& x,
                                           std::optional<std::size_t> target = {},
                                           const PerturbationConfig& config = {});

/// Single entry point used by the harness and the CLI.
enum class FeatureMethod {
    saliency,
    integrated_gradients,
    input_x_gradient,
    gradient_shap,
    ablation,
    permutation,
    occlusion,
};

std::string to_string(FeatureMethod method);
FeatureMethod parse_feature_method(std::string_view name);

struct FeatureMethodConfig {
    Baseline baseline;
    std::size_t steps = 64;
    GradientShapConfig shap;
    std::size_t window = 3;
    std::span<const Signal> reference;
};

AttributionResult attribute(FeatureMethod method, const Predictor& f, const Signal& x,
                            std::optional<std::size_t> target = {}, const FeatureMethodConfig& config = {});

} // namespace eqxai
