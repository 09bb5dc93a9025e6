// Acceptance suite: one PASS/FAIL line per criterion, exit code 0 iff all pass.
//
// Models are trained once (criterion 2) and reused by later criteria through
// a scratch model directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "eqxai/attribution.hpp"
#include "eqxai/data_synth.hpp"
#include "eqxai/errors.hpp"
#include "eqxai/harness.hpp"
#include "eqxai/invariance_enforcer.hpp"
#include "eqxai/parallel.hpp"
#include "eqxai/robustness_metrics.hpp"
#include "support/model_gradients.hpp"
#include "support/op_cases.hpp"

namespace fs = std::filesystem;
using namespace eqxai;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 6) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

fs::path scratch() {
    static const fs::path dir = fs::temp_directory_path() / ("eqxai_acceptance_" + std::to_string(::getpid()));
    return dir;
}

fs::path model_dir() { return scratch() / "models"; }

ExperimentConfig base_config(DatasetKind kind, std::vector<ModelKind> models, const std::string& name) {
    ExperimentConfig c = parse_config("[dataset]\nkind = " + to_string(kind) + "\n");
    c.name = name;
    c.models = std::move(models);
    c.dataset.n_train = 512;
    c.dataset.n_test = 256;
    c.dataset.seed = 0;
    c.seed = 0;
    c.n_test = 256;
    c.svg = false;
    c.output_dir = scratch() / name;
    c.model_dir = model_dir();
    return c;
}

std::vector<MethodSpec> methods(const std::string& list) {
    std::vector<MethodSpec> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_method(item));
    return out;
}

double mean_of(const std::vector<ReportRow>& rows, const std::string& model, const std::string& method,
               const std::string& metric) {
    std::vector<double> v;
    for (const auto& r : rows) {
        if (r.model == model && r.method == method && r.metric == metric) v.push_back(r.value);
    }
    if (v.empty()) throw Error("no rows for " + model + " " + method + " " + metric);
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Memoises a deterministic explainer on its input values. Group orbits are
// small, so wrapped explainers evaluated on g x for many g reuse results.
Explainer memoised(Explainer base) {
    struct Cache {
        std::mutex mu;
        std::map<std::vector<double>, Explanation> entries;
    };
    auto cache = std::make_shared<Cache>();
    return [base = std::move(base), cache](const Signal& x) {
        {
            std::lock_guard<std::mutex> lock(cache->mu);
            const auto it = cache->entries.find(x.values);
            if (it != cache->entries.end()) return it->second;
        }
        auto e = base(x);
        std::lock_guard<std::mutex> lock(cache->mu);
        cache->entries.emplace(x.values, e);
        return e;
    };
}

// ------------------------------------------------------------------ 1

Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    const auto ops = testing::check_all_ops(100);
    double worst_model = 0.0;
    std::string notes;
    bool all_instances = true;
    for (auto kind : {ModelKind::all_cnn_1d, ModelKind::flatten_cnn_1d, ModelKind::all_cnn_2d,
                      ModelKind::flatten_cnn_2d, ModelKind::deep_set, ModelKind::graph_conv, ModelKind::bow_mlp}) {
        const auto s = testing::check_model_gradients(kind, 100, 11);
        all_instances = all_instances && s.instances == 100;
        worst_model = std::max({worst_model, s.max_input_error, s.max_parameter_error});
    }
    const double t = seconds_since(t0);
    const bool pass = ops.never_smooth.empty() && ops.max_relative_error < 1e-4 && all_instances &&
                      worst_model < 1e-4 && t < 30.0;
    return {pass, "ops max rel err " + num(ops.max_relative_error, 3) + " over " + std::to_string(ops.checks) +
                      " checks, models max rel err " + num(worst_model, 3) + " over 7x100 instances, " +
                      num(t, 3) + " s (limit 30 s)"};
}

// ------------------------------------------------------------------ 2

Outcome model_invariance() {
    struct Job {
        DatasetKind data;
        ModelKind model;
        bool augment;
        bool invariant;
    };
    const Job jobs[] = {
        {DatasetKind::ecg_like, ModelKind::all_cnn_1d, false, true},
        {DatasetKind::toy_images, ModelKind::all_cnn_2d, false, true},
        {DatasetKind::point_clouds, ModelKind::deep_set, false, true},
        {DatasetKind::motif_graphs, ModelKind::graph_conv, false, true},
        {DatasetKind::token_bags, ModelKind::bow_mlp, false, true},
        {DatasetKind::ecg_like, ModelKind::flatten_cnn_1d, false, false},
        {DatasetKind::ecg_like, ModelKind::flatten_cnn_1d, true, false},
    };
    bool pass = true;
    std::string detail;
    for (const auto& j : jobs) {
        auto cfg = base_config(j.data, {j.model}, "train");
        cfg.augment = j.augment;
        const auto data = generate(cfg.dataset);
        auto [model, result] = train_model(cfg, data, j.model);
        const auto label = to_string(j.model) + (j.augment ? "+aug" : "");
        save_trained(model_dir(), label, model, result.checkpoints);
        if (!j.invariant) continue;

        const auto group = data.group();
        const ModelPredictor f(model);
        std::vector<double> worst(data.test.size(), 1.0);
        std::vector<std::size_t> terms(data.test.size(), 0);
        parallel_for(data.test.size(), [&](std::size_t i) {
            const auto& x = data.test[i].x;
            const auto px = autodiff::softmax(f.forward(x));
            const auto elements = metric_elements(group, EstimatorConfig::automatic(group, 50, i));
            for (const auto& g : elements) {
                const auto pg = autodiff::softmax(f.forward(group.act(g, x)));
                worst[i] = std::min(worst[i], similarity(SimilarityKind::cosine, pg, px));
            }
            terms[i] = elements.size();
        });
        const double w = *std::min_element(worst.begin(), worst.end());
        const bool ok = w >= 1.0 - 1e-9;
        pass = pass && ok;
        detail += label + " min " + num(w, 12) + " (" + std::to_string(data.test.size()) + "x" +
                  std::to_string(terms[0]) + "); ";
    }
    return {pass, detail};
}

// ------------------------------------------------------------------ 3

Outcome verdict_grid(RunResult& ecg_run) {
    const auto t0 = Clock::now();
    auto ecg = base_config(DatasetKind::ecg_like, {ModelKind::all_cnn_1d}, "grid_ecg");
    ecg.n_test = 32;
    auto ds = base_config(DatasetKind::point_clouds, {ModelKind::deep_set}, "grid_deep_set");
    ds.n_test = 32;
    const RunStages grid_only{true, false, false};
    ecg_run = run(ecg, grid_only);
    const auto ds_run = run(ds, grid_only);

    bool pass = true;
    std::ostringstream d;
    // (a) guaranteed equivariance
    double min_a = 1.0;
    for (const auto* run_cfg : {&ecg, &ds}) {
        const auto& rows = run_cfg == &ecg ? ecg_run.rows : ds_run.rows;
        const auto model = to_string(run_cfg->models[0]);
        for (const auto* m : {"saliency", "integrated_gradients", "input_x_gradient", "ablation", "occlusion"}) {
            // occlusion is defined on grid domains only
            if (std::string(m) == "occlusion" && run_cfg == &ds) continue;
            min_a = std::min(min_a, mean_of(rows, model, m, "equiv"));
        }
    }
    const bool a = min_a >= 0.999;
    // (b) non-invariant baselines
    double max_b = 0.0;
    for (const auto* run_cfg : {&ecg, &ds}) {
        const auto& rows = run_cfg == &ecg ? ecg_run.rows : ds_run.rows;
        const auto model = to_string(run_cfg->models[0]);
        for (const auto* m : {"gradient_shap", "permutation"}) max_b = std::max(max_b, mean_of(rows, model, m, "equiv"));
    }
    const bool b = max_b < 0.99 && max_b < min_a;
    // (c) loss-based invariance
    double min_c = 1.0;
    for (const auto* run_cfg : {&ecg, &ds}) {
        const auto& rows = run_cfg == &ecg ? ecg_run.rows : ds_run.rows;
        const auto model = to_string(run_cfg->models[0]);
        for (const auto* m : {"influence", "tracin"}) min_c = std::min(min_c, mean_of(rows, model, m, "inv"));
    }
    const bool c = min_c >= 1.0 - 1e-9;
    // (d) representation-based methods
    double min_d = 1.0;
    for (const auto* run_cfg : {&ecg, &ds}) {
        const auto& rows = run_cfg == &ecg ? ecg_run.rows : ds_run.rows;
        const auto model = to_string(run_cfg->models[0]);
        for (const auto* m : {"simplex@inv", "rep_sim@inv", "cav@inv", "car@inv"}) {
            min_d = std::min(min_d, mean_of(rows, model, m, "inv"));
        }
    }
    double min_equiv_tap = 1.0;
    std::string worst_equiv;
    for (const auto* m : {"simplex@equiv", "rep_sim@equiv", "cav@equiv", "car@equiv"}) {
        const double v = mean_of(ds_run.rows, "deep_set", m, "inv");
        if (v < min_equiv_tap) {
            min_equiv_tap = v;
            worst_equiv = m;
        }
    }
    const bool dd = min_d >= 0.999 && min_equiv_tap < 0.95;
    const bool no_violation = ecg_run.ok() && ds_run.ok();
    const double t = seconds_since(t0);
    pass = a && b && c && dd && no_violation && t < 300.0;
    d << "(a) min " << num(min_a, 8) << (a ? " ok" : " FAIL") << "; (b) max " << num(max_b, 4) << (b ? " ok" : " FAIL")
      << "; (c) min " << num(min_c, 12) << (c ? " ok" : " FAIL") << "; (d) inv taps min " << num(min_d, 8)
      << ", deep_set equiv tap " << worst_equiv << " " << num(min_equiv_tap, 4) << (dd ? " ok" : " FAIL")
      << "; verdict grid " << (no_violation ? "consistent" : "VIOLATED") << "; " << num(t, 3) << " s (limit 300 s)";
    return {pass, d.str()};
}

// ------------------------------------------------------------------ 4

Outcome group_enforcement() {
    const auto t0 = Clock::now();
    // Every method wrapped with the full cyclic group, on the non-invariant
    // flatten CNN so that the base explanations are not invariant.
    auto cfg = base_config(DatasetKind::ecg_like, {ModelKind::flatten_cnn_1d}, "enforce");
    cfg.methods = methods(
        "saliency,integrated_gradients,input_x_gradient,gradient_shap,ablation,permutation,occlusion,"
        "influence,tracin,simplex@inv,simplex@equiv,rep_sim@inv,rep_sim@equiv,cav@inv,cav@equiv,car@inv,car@equiv");
    const auto data = generate(cfg.dataset);
    const auto group = data.group();
    auto [model, checkpoints] = load_trained(model_dir(), "flatten_cnn_1d");
    ExplainerSuite suite(cfg, data, model, checkpoints);
    const std::size_t n = 4;
    double worst = 0.0;
    std::string worst_method;
    for (const auto& m : cfg.methods) {
        suite.prepare(m);
        const bool concept_method = m.family == MethodFamily::concept_based;
        std::vector<double> dev(n, 0.0);
        parallel_for(n, [&](std::size_t i) {
            const auto& s = data.test[i];
            const auto enforced = enforce(memoised(suite.explainer(m, s.label, concept_method)), group, 32);
            Explainer e = enforced;
            if (concept_method) e = [enforced](const Signal& x) { return threshold_concepts(enforced(x)); };
            const auto sim = concept_method ? SimilarityKind::accuracy : SimilarityKind::cosine;
            dev[i] = std::abs(invariance_score(e, group, s.x, sim).value - 1.0);
        });
        const double w = *std::max_element(dev.begin(), dev.end());
        if (w >= worst) {
            worst = w;
            worst_method = m.label();
        }
    }
    const bool full_ok = worst <= 1e-9;

    // The n_inv sweep.
    auto sweep_cfg = base_config(DatasetKind::ecg_like, {ModelKind::all_cnn_1d}, "sweep");
    sweep_cfg.n_test = 256;
    sweep_cfg.enforce_methods = methods("rep_sim@equiv,simplex@equiv,cav@equiv,car@equiv");
    sweep_cfg.enforce_n_inv = {1, 2, 4, 8, 16, 32};
    sweep_cfg.simplex_epochs = 300;
    const auto r = run(sweep_cfg, RunStages{false, true, false});
    bool monotone = true;
    bool ends_at_one = true;
    std::ostringstream curves;
    for (std::size_t i = 0; i < r.sweep.size(); ++i) {
        const auto& p = r.sweep[i];
        const bool first = i == 0 || r.sweep[i - 1].method != p.method;
        if (first) curves << (i ? "; " : "") << p.method << ":";
        if (!first && p.invariance.mean < r.sweep[i - 1].invariance.mean - 1e-12) monotone = false;
        curves << ' ' << num(p.invariance.mean, 4);
        if (p.n_inv == 32 && std::abs(p.invariance.mean - 1.0) > 1e-9) ends_at_one = false;
    }
    const double t = seconds_since(t0);
    const bool pass = full_ok && monotone && ends_at_one && t < 120.0;
    return {pass, "full group: max |Inv - 1| " + num(worst, 3) + " over " + std::to_string(cfg.methods.size()) +
                      " methods (worst " + worst_method + "); sweep " + (monotone ? "non-decreasing" : "NOT monotone") +
                      (ends_at_one ? ", ends at 1" : ", does NOT end at 1") + " [" + curves.str() + "]; " + num(t, 3) +
                      " s (limit 120 s)"};
}

// ------------------------------------------------------------------ 5

Outcome monte_carlo_fidelity() {
    const double bound = hoeffding_bound(1000, 50, 0.02);
    const bool bound_ok = std::abs(bound - 2.0 * std::exp(-10.0)) < 1e-15 && bound <= 1e-4;

    // Per-(example, g) invariance terms of a non-invariant explainer on 1000
    // ECG test examples; a trial draws 50 elements per example with
    // replacement and averages over the test set.
    auto cfg = base_config(DatasetKind::ecg_like, {ModelKind::all_cnn_1d}, "mc");
    cfg.dataset.n_test = 1000;
    const auto data = generate(cfg.dataset);
    const auto group = data.group();
    const auto elements = group.enumerate();
    auto [model, checkpoints] = load_trained(model_dir(), "all_cnn_1d");
    ExplainerSuite suite(cfg, data, model, checkpoints);
    const auto method = parse_method("rep_sim@equiv");
    suite.prepare(method);
    const std::size_t n_test = data.test.size(), G = elements.size();
    std::vector<double> terms(n_test * G);
    parallel_for(n_test, [&](std::size_t i) {
        const auto e = suite.explainer(method, data.test[i].label);
        const auto ex = e(data.test[i].x).values;
        for (std::size_t k = 0; k < G; ++k) {
            terms[i * G + k] = similarity(SimilarityKind::cosine, e(group.act(elements[k], data.test[i].x)).values, ex);
        }
    });
    // The table reproduces the library's exact estimator.
    const auto e0 = suite.explainer(method, data.test[0].label);
    const double lib0 = invariance_score(e0, group, data.test[0].x).value;
    const double tab0 = std::accumulate(terms.begin(), terms.begin() + static_cast<long>(G), 0.0) / static_cast<double>(G);
    const bool table_ok = std::abs(lib0 - tab0) < 1e-12;

    const double exact = std::accumulate(terms.begin(), terms.end(), 0.0) / static_cast<double>(terms.size());
    const std::size_t trials = 1000, n_samp = 50;
    std::vector<double> err(trials);
    parallel_for(trials, [&](std::size_t t) {
        std::mt19937_64 rng(t);
        std::uniform_int_distribution<std::size_t> pick(0, G - 1);
        double total = 0.0;
        for (std::size_t i = 0; i < n_test; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < n_samp; ++k) s += terms[i * G + pick(rng)];
            total += s / static_cast<double>(n_samp);
        }
        err[t] = std::abs(total / static_cast<double>(n_test) - exact);
    });
    const auto within = static_cast<double>(std::count_if(err.begin(), err.end(), [](double e) { return e <= 0.02; }));
    const double frac = within / static_cast<double>(trials);
    const double worst = *std::max_element(err.begin(), err.end());
    const bool pass = bound_ok && table_ok && frac >= 0.9999;
    return {pass, "hoeffding_bound(1000, 50, 0.02) = " + num(bound, 6) + " <= 1e-4; " + num(frac * 100, 6) +
                      "% of 1000 trials within 0.02 (max error " + num(worst, 3) + ", exact mean " + num(exact, 6) +
                      ")"};
}

// ------------------------------------------------------------------ 6

Outcome relaxed_invariance() {
    auto cfg = base_config(DatasetKind::ecg_like, {ModelKind::all_cnn_1d, ModelKind::flatten_cnn_1d}, "relaxed");
    cfg.n_test = 64;
    cfg.methods = methods("saliency");
    const auto r = run(cfg, RunStages{true, false, false});
    const double inv_all = mean_of(r.rows, "all_cnn_1d", "model", "model_inv");
    const double inv_flat = mean_of(r.rows, "flatten_cnn_1d", "model", "model_inv");
    const double eq_all = mean_of(r.rows, "all_cnn_1d", "saliency", "equiv");
    const double eq_flat = mean_of(r.rows, "flatten_cnn_1d", "saliency", "equiv");
    const bool pass = inv_flat < inv_all && eq_all - eq_flat >= 0.05;
    return {pass, "model_inv all_cnn " + num(inv_all, 10) + " vs flatten " + num(inv_flat, 10) +
                      "; saliency equiv all_cnn " + num(eq_all, 6) + " vs flatten " + num(eq_flat, 6) + " (gap " +
                      num(eq_all - eq_flat, 4) + ", need >= 0.05)"};
}

// ------------------------------------------------------------------ 7

Outcome sensitivity_comparison() {
    auto cfg = base_config(DatasetKind::ecg_like, {ModelKind::flatten_cnn_1d}, "sensitivity");
    cfg.augment = true;
    cfg.n_test = 64;
    cfg.sensitivity_methods = methods("integrated_gradients,gradient_shap,permutation,ablation,occlusion");
    const auto r = run(cfg, RunStages{false, false, true});
    bool pass = !r.correlations.empty();
    std::ostringstream d;
    for (const auto& c : r.correlations) {
        const bool ok = c.r && std::abs(*c.r) < 0.95;
        pass = pass && ok;
        d << c.method << " r=" << (c.r ? num(*c.r, 3) : std::string("undefined")) << (ok ? "" : " FAIL") << "; ";
    }
    return {pass, d.str() + "(flatten_cnn_1d+aug, n=64, |r| < 0.95)"};
}

// ------------------------------------------------------------------ 8

Outcome reproducibility() {
    auto make = [](const std::string& name) {
        auto c = base_config(DatasetKind::ecg_like, {ModelKind::all_cnn_1d, ModelKind::flatten_cnn_1d}, name);
        c.model_dir.reset();  // include training in the comparison
        c.training.epochs = 3;
        c.n_test = 6;
        c.estimator = "monte_carlo";
        c.n_samp = 10;
        c.seed = 5;
        c.methods = methods("saliency,gradient_shap,permutation,influence,tracin,simplex@equiv,cav@inv,car@equiv");
        c.sensitivity_methods = methods("gradient_shap");
        c.enforce_methods = methods("rep_sim@equiv");
        c.enforce_n_inv = {1, 4};
        return c;
    };
    run(make("repro_a"));
    run(make("repro_b"));
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        return s.str();
    };
    bool pass = true;
    std::string d;
    for (const auto* f : {"report.csv", "sweep.csv", "sensitivity.csv"}) {
        const auto a = slurp(scratch() / "repro_a" / f);
        const auto b = slurp(scratch() / "repro_b" / f);
        const bool same = !a.empty() && a == b;
        pass = pass && same;
        d += std::string(f) + (same ? " identical (" + std::to_string(a.size()) + " bytes); " : " DIFFERS; ");
    }
    return {pass, d};
}

} // namespace

int main() {
    const auto start = Clock::now();
    fs::create_directories(scratch());
    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& body) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {false, "error: " + describe(e)};
        }
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "criterion " << id << " " << name << ": " << o.detail
                  << " [" << num(seconds_since(t0), 3) << " s]" << std::endl;
    };

    RunResult ecg_grid;
    report(1, "gradient correctness", gradient_correctness);
    report(2, "model invariance", model_invariance);
    report(3, "verdict grid", [&] { return verdict_grid(ecg_grid); });
    report(4, "group enforcement", group_enforcement);
    report(5, "monte carlo fidelity", monte_carlo_fidelity);
    report(6, "relaxed invariance", relaxed_invariance);
    report(7, "sensitivity comparison", sensitivity_comparison);
    report(8, "reproducibility", reproducibility);
    const double total = seconds_since(start);
    const bool fast = total < 600.0;
    if (!fast) ++failures;
    std::cout << (fast ? "[PASS] " : "[FAIL] ") << "criterion 9 suite runtime: " << num(total, 4) << " s on "
              << worker_count() << " worker(s) (limit 600 s)" << std::endl;

    std::error_code ec;
    fs::remove_all(scratch(), ec);
    return failures == 0 ? 0 : 1;
}
