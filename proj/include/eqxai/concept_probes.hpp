/**
 * @file concept_probes.hpp
 * @brief Concept classifiers over model representations: linear activation
 * vectors (CAV) and kernel concept regions (CAR).
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eqxai/container.hpp"

namespace eqxai {

enum class ConceptKind { cav, car };

std::string to_string(ConceptKind kind);
ConceptKind parse_concept_kind(std::string_view name);

/// Row-major matrix of doubles, `rows` x `cols`.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);
};

struct ConceptClassifier {
    ConceptKind kind = ConceptKind::cav;
    std::string name;
    std::size_t input_dim = 0;
    double train_accuracy = 0.0;

    // cav: decision = weights . rep + bias
    std::vector<double> weights;
    double bias = 0.0;

    // car: rep is centred and projected on `components` (k x input_dim),
    // then decision = sum_i coef_i exp(-gamma |z - sv_i|^2) + bias
    std::vector<double> pca_mean;
    Matrix components;
    Matrix support_vectors;
    std::vector<double> coef;  // alpha_i * y_i
    double gamma = 0.0;

    double decision(std::span<const double> rep) const;
    bool predict(std::span<const double> rep) const { return decision(rep) > 0.0; }
    /// PCA coordinates of rep (car only).
    std::vector<double> project(std::span<const double> rep) const;
};

struct CavConfig {
    double lr = 1e-2;
    double tol = 1e-3;
    std::size_t epochs = 1000;
    std::uint64_t seed = 0;
};

/// Logistic regression by stochastic gradient descent; stops once the epoch
/// loss has failed to improve on the best by `tol` for five epochs.
ConceptClassifier fit_cav(const std::vector<std::vector<double>>& reps, const std::vector<int>& labels,
                          const CavConfig& config = {});

struct CarConfig {
    std::size_t pca_components = 10;
    /// RBF width; 1 / (k * variance of the projected features) when unset.
    std::optional<double> rbf_gamma;
    double c_reg = 1.0;
    double tolerance = 1e-3;
    std::size_t max_iterations = 200000;
};

/// PCA to min(pca_components, d) dimensions followed by a soft-margin RBF
/// support vector classifier trained by sequential minimal optimisation.
ConceptClassifier fit_car(const std::vector<std::vector<double>>& reps, const std::vector<int>& labels,
                          const CarConfig& config = {});

/// One presence bit per classifier.
std::vector<int> predict_concepts(std::span<const ConceptClassifier> classifiers, std::span<const double> rep);

double concept_accuracy(const ConceptClassifier& c, const std::vector<std::vector<double>>& reps,
                        const std::vector<int>& labels);

Container to_container(const ConceptClassifier& c);
ConceptClassifier concept_from_container(const Container& c);
void save_concept(const std::filesystem::path& path, const ConceptClassifier& c);
ConceptClassifier load_concept(const std::filesystem::path& path);

} // namespace eqxai
