/**
 * @file harness.hpp
 * @brief Experiment orchestration: configuration, the method x metric grid,
 * enforcement sweeps, sensitivity comparison and report generation.
 *
 * Configuration is an INI file. Lists are comma separated. Every key is
 * optional; see configs/ecg.ini for the full schema with defaults.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eqxai/attribution.hpp"
#include "eqxai/concept_probes.hpp"
#include "eqxai/data_synth.hpp"
#include "eqxai/example_importance.hpp"
#include "eqxai/models.hpp"
#include "eqxai/robustness_metrics.hpp"

namespace eqxai {

enum class MethodFamily { feature, example, concept_based };

/// A method as written in configs and report rows:
///   name            saliency, integrated_gradients, influence, ...
///   name[baseline]  feature methods with a non-default baseline
///   name@tap        representation-based methods (simplex, rep_sim, cav, car)
struct MethodSpec {
    MethodFamily family = MethodFamily::feature;
    std::string name;
    std::optional<Tap> tap;
    std::optional<BaselineMode> baseline;

    std::string label() const;
    bool operator==(const MethodSpec&) const = default;
};

MethodSpec parse_method(std::string_view label);

/// The metric that matches a method's explanation type.
std::string metric_for(const MethodSpec& m);

enum class Guarantee { none, conditional, unconditional };

/// The robustness guarantee a method has on an invariant model, and whether
/// the condition of a conditional guarantee holds for this configuration.
struct GuaranteeInfo {
    std::string type;         // feature importance, example importance, concept-based
    std::string computation;  // gradient, perturbation, loss, representation
    Guarantee invariant = Guarantee::none;
    Guarantee equivariant = Guarantee::none;
    bool condition_met = false;
    /// The guarantee on the metric that matches the explanation type.
    Guarantee relevant() const;
    /// True when that metric is guaranteed to reach 1 on an invariant model.
    bool applies() const;
};

GuaranteeInfo guarantee_of(const MethodSpec& m);
std::string symbol(Guarantee g);

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetSpec dataset;
    std::vector<ModelKind> models;
    TrainConfig training;
    bool augment = false;
    /// When set, models are loaded from <model_dir>/<model>.eqx (and their
    /// checkpoints) instead of being trained.
    std::optional<std::filesystem::path> model_dir;

    std::vector<MethodSpec> methods;
    std::size_t ig_steps = 64;
    std::size_t occlusion_window = 3;
    std::optional<std::size_t> target;  // predicted class when unset
    std::size_t example_subset = 100;   // training examples scored by example methods
    std::size_t simplex_epochs = 1000;

    std::string estimator = "auto";  // auto, exact, monte_carlo
    std::size_t n_test = 256;
    std::size_t n_samp = 50;
    bool model_invariance = true;

    std::vector<MethodSpec> sensitivity_methods;
    double sensitivity_epsilon = 0.02;
    std::size_t sensitivity_perturbations = 10;

    std::vector<MethodSpec> enforce_methods;
    std::vector<std::size_t> enforce_n_inv;
    std::uint64_t enforce_seed = 0;

    std::filesystem::path output_dir = "eqxai_out";
    bool svg = true;
    std::uint64_t seed = 0;

    bool assert_guarantees = true;
    bool assert_sweep = true;
    double tolerance = 1e-3;  // slack on conditional guarantees

    /// Throws ConfigError on inconsistent settings.
    void validate() const;
};

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

/// Parses INI text. Overrides are "section.key" = value pairs applied on top.
ExperimentConfig parse_config(std::string_view ini, const ConfigOverrides& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});
/// The configuration with every default spelled out, as INI text.
std::string default_config_text();

/// Builds explainers for every configured method on one trained model.
/// prepare() fits the shared state of a method (influence solver, TracIn
/// gradients, training representations, concept classifiers) and must run
/// before explainer() is called for it; explainers may then be used from
/// several threads.
class ExplainerSuite {
public:
    ExplainerSuite(const ExperimentConfig& cfg, const Dataset& data, const Model& model,
                   std::vector<Checkpoint> checkpoints);
    ~ExplainerSuite();
    ExplainerSuite(const ExplainerSuite&) = delete;
    ExplainerSuite& operator=(const ExplainerSuite&) = delete;

    void prepare(const MethodSpec& m);

    /// Explainer for one test example. `label` is its true class, used by
    /// the loss-based methods. Concept methods return raw scores when
    /// `scores` is set and presence bits otherwise.
    Explainer explainer(const MethodSpec& m, std::size_t label, bool scores = false) const;

    const ModelPredictor& predictor() const { return predictor_; }

private:
    const ExperimentConfig& cfg_;
    const Dataset& data_;
    const Model& model_;
    std::vector<Checkpoint> checkpoints_;
    ModelPredictor predictor_;
    std::vector<Signal> train_x_;
    TrainSubset subset_;
    FeatureMethodConfig feature_;
    std::unique_ptr<InfluenceFunctions> influence_;
    std::unique_ptr<TracIn> tracin_;
    std::map<Tap, std::vector<std::vector<double>>> subset_reps_;
    std::map<std::pair<ConceptKind, Tap>, std::vector<ConceptClassifier>> concepts_;
};

struct ReportRow {
    std::string dataset;
    std::string model;
    std::string method;
    std::string metric;  // inv, equiv, model_inv, sensitivity
    std::string mode;    // exact, monte_carlo, sampled
    std::size_t n_samp = 0;
    std::size_t example_id = 0;
    double value = 0.0;
    std::uint64_t seed = 0;
};

inline constexpr const char* kReportHeader = "dataset,model,method,metric,mode,n_samp,example_id,value,seed";

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows);
/// Throws FormatError on a bad header or row.
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

struct SweepPoint {
    std::string dataset;
    std::string model;
    std::string method;
    std::size_t n_inv = 0;
    std::string enforce_mode;
    Summary invariance;
};

struct CorrelationResult {
    std::string dataset;
    std::string model;
    std::string method;
    std::size_t n = 0;
    /// Pearson r between per-example sensitivity and equivariance; unset when
    /// either series is constant.
    std::optional<double> r;
};

struct Verdict {
    std::string dataset;
    std::string model;
    std::string method;
    std::string metric;
    GuaranteeInfo guarantee;
    bool invariant_model = false;
    Summary observed;
    bool violated = false;
};

/// One verdict per (dataset, model, method, metric) group of explanation rows.
std::vector<Verdict> judge(const std::vector<ReportRow>& rows, double tolerance = 1e-3);

struct RunResult {
    std::vector<ReportRow> rows;
    std::vector<SweepPoint> sweep;
    std::vector<CorrelationResult> correlations;
    std::vector<Verdict> verdicts;
    std::vector<std::string> failures;  // assertions that did not hold
    bool ok() const { return failures.empty(); }
};

using LogSink = std::function<void(const std::string&)>;

/// Stages of run(); the CLI subcommands enable a subset.
struct RunStages {
    bool grid = true;
    bool sweep = true;
    bool sensitivity = true;
};

/// Generates the dataset, trains or loads the models, runs the enabled
/// stages and writes report.csv plus the summary CSVs (boxplot, sweep,
/// scatter, sensitivity, verdict) and optional SVG charts to output_dir.
RunResult run(const ExperimentConfig& config, const RunStages& stages = {}, const LogSink& log = {});

/// Trains one model of the configuration and returns it with its checkpoints.
std::pair<Model, TrainResult> train_model(const ExperimentConfig& config, const Dataset& data, ModelKind kind);

/// Saves <dir>/<label>.eqx and <dir>/<label>.ckpt<epoch>.eqx.
void save_trained(const std::filesystem::path& dir, const std::string& label, const Model& model,
                  const std::vector<Checkpoint>& checkpoints);
std::pair<Model, std::vector<Checkpoint>> load_trained(const std::filesystem::path& dir, const std::string& label);

struct ReportSummary {
    std::string text;
    std::vector<Verdict> verdicts;
    /// Largest |value(seed a) - value(seed b)| over rows that differ only in
    /// seed; unset when every row has a single seed.
    std::optional<double> max_seed_drift;
    /// Largest spread among rows that agree in every key including the seed,
    /// as produced by repeated runs of one configuration.
    std::optional<double> max_replicate_drift;
    bool any_violation = false;
};

/// Summarises report CSVs: per-group mean with a 95% interval, the verdict
/// grid and cross-seed drift. Writes summary.txt, verdict.csv and, when
/// svg is set, boxplot.svg to out_dir if it is not empty.
ReportSummary report(const std::vector<std::filesystem::path>& csvs, const std::filesystem::path& out_dir = {},
                     bool svg = true, double tolerance = 1e-3);

} // namespace eqxai
