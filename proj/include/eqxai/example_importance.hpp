/**
 * @file example_importance.hpp
 * @brief Training-example attribution: influence functions and TracIn on the
 * output layer, SimplEx and representation similarity on a tap.
 */

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eqxai/models.hpp"

namespace eqxai {

struct TrainSubset {
    std::vector<Signal> xs;
    std::vector<std::size_t> ys;

    std::size_t size() const { return xs.size(); }
    /// Throws unless there are at least two examples with matching labels.
    void validate(const Model& model) const;
};

struct ExampleScores {
    std::vector<double> scores;
    std::string method;
    /// SimplEx: reconstruction error of the fitted mixture.
    std::optional<double> residual;
    bool converged = true;
};

/// Input of the output layer, z in logits = act(z W + b).
std::vector<double> penultimate(const Model& model, const Signal& x);

/// Taps for a batch of inputs, computed in parallel.
std::vector<std::vector<double>> representations(const Model& model, Tap tap, std::span<const Signal> xs);

/// Gradient of the cross-entropy loss with respect to the output-layer
/// parameters, flattened as out.weight (row-major [h, K]) then out.bias.
std::vector<double> last_layer_gradient(const Model& model, const Signal& x, std::size_t y);

/// Influence of each training example on the loss at (x, y) through the
/// damped Hessian of the mean training loss over the output layer. Scores
/// g_n^T (H + damping I)^{-1} g_x, with the solve done by conjugate gradients
/// on Hessian-vector products.
class InfluenceFunctions {
public:
    InfluenceFunctions(const Model& model, TrainSubset subset, double damping = 1e-2,
                       std::size_t max_iterations = 500, double tolerance = 1e-10);

    ExampleScores scores(const Signal& x, std::size_t y) const;

    /// (H + damping I) v
    std::vector<double> damped_hvp(std::span<const double> v) const;
    std::size_t parameter_count() const { return dim_; }
    const std::vector<std::vector<double>>& train_gradients() const { return grads_; }

private:
    const Model* model_;
    TrainSubset subset_;
    double damping_;
    std::size_t max_iterations_;
    double tolerance_;
    std::size_t hidden_ = 0;
    std::size_t classes_ = 0;
    std::size_t dim_ = 0;
    std::vector<std::vector<double>> z_;      // penultimate features per example
    std::vector<std::vector<double>> curv_;   // K x K curvature of the loss in the pre-activation, per example
    std::vector<std::vector<double>> grads_;  // output-layer gradients per example
};

ExampleScores influence_functions(const Model& model, const TrainSubset& subset, const Signal& x, std::size_t y,
                                  double damping = 1e-2);

/// TracIn: sum over checkpoints of lr * g_n . g_x on the output layer.
class TracIn {
public:
    TracIn(const Model& model, std::span<const Checkpoint> checkpoints, TrainSubset subset);
    ExampleScores scores(const Signal& x, std::size_t y) const;

private:
    std::vector<Model> models_;
    std::vector<double> lrs_;
    std::vector<std::vector<std::vector<double>>> grads_;  // [checkpoint][example]
};

ExampleScores tracin(const Model& model, std::span<const Checkpoint> checkpoints, const TrainSubset& subset,
                     const Signal& x, std::size_t y);

struct SimplexConfig {
    std::size_t epochs = 1000;
    double lr = 0.1;
};

/// Simplex weights w minimising |rep_x - sum_n w_n rep_train[n]|^2, fitted
/// through a softmax parameterisation with Adam.
ExampleScores simplex_weights(const std::vector<std::vector<double>>& rep_train, std::span<const double> rep_x,
                              const SimplexConfig& config = {});

/// rep_x . rep_train[n]
ExampleScores representation_similarity(const std::vector<std::vector<double>>& rep_train,
                                        std::span<const double> rep_x);

} // namespace eqxai
