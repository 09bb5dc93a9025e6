// eqxai command line: config, synth, train, eval, enforce-sweep, sensitivity, report.
//
// Exit codes: 0 success, 1 a configured assertion failed, 2 usage or runtime error.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eqxai/data_synth.hpp"
#include "eqxai/errors.hpp"
#include "eqxai/harness.hpp"

namespace {

using namespace eqxai;

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("-c,--config", c.config, "INI experiment configuration")->check(CLI::ExistingFile);
    app->add_option("--set", c.sets, "Override a config entry, section.key=value (repeatable)");
    app->add_option("-o,--out", c.out, "Output directory");
    app->add_option("--seed", c.seed, "Global seed");
    app->add_option("--threads", c.threads, "Worker threads (same as EQXAI_THREADS)");
    app->add_flag("-q,--quiet", c.quiet, "Only print errors and the final status");
}

ConfigOverrides overrides_of(const Common& c) {
    ConfigOverrides o;
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
        o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (c.seed) o.emplace_back("experiment.seed", std::to_string(*c.seed));
    if (!c.out.empty()) o.emplace_back("experiment.output_dir", c.out);
    return o;
}

ExperimentConfig config_of(const Common& c, ConfigOverrides extra = {}) {
    auto o = overrides_of(c);
    o.insert(o.end(), extra.begin(), extra.end());
    if (c.threads) setenv("EQXAI_THREADS", std::to_string(*c.threads).c_str(), 1);
    return c.config.empty() ? parse_config("", o) : load_config(c.config, o);
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
}

// Gives every method that accepts a baseline the requested one.
void apply_baseline(std::vector<MethodSpec>& methods, const std::string& baseline) {
    for (auto& m : methods) {
        if (m.family != MethodFamily::feature) continue;
        try {
            m = parse_method(m.name + "[" + baseline + "]");
        } catch (const ConfigError&) {
            // the method has no baseline
        }
    }
}

LogSink sink(bool quiet) {
    if (quiet) return {};
    return [](const std::string& s) { std::cerr << s << '\n'; };
}

int finish(const RunResult& r, const ExperimentConfig& c) {
    std::cout << "wrote " << (c.output_dir / "report.csv").string() << " (" << r.rows.size() << " rows)\n";
    for (const auto& f : r.failures) std::cout << "FAILED: " << f << '\n';
    std::cout << (r.ok() ? "all assertions passed" : "assertions failed") << '\n';
    return r.ok() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Invariance and equivariance of explanations for symmetry-invariant models"};
    app.require_subcommand(1);

    auto* config_cmd = app.add_subcommand("config", "Print the default configuration with every key");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    std::string kind = "ecg_like", stem;
    DatasetSpec spec;
    synth->add_option("--kind", kind, "ecg_like, toy_images, point_clouds, token_bags, motif_graphs");
    synth->add_option("--n-train", spec.n_train);
    synth->add_option("--n-test", spec.n_test);
    synth->add_option("--noise", spec.noise_level);
    synth->add_option("--seed", spec.seed);
    synth->add_option("-o,--out", stem, "Output stem; writes <stem>.eqx and <stem>.json")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the configured models and save them with checkpoints");
    Common train_opts;
    add_common(train_cmd, train_opts);

    // eval
    auto* eval = app.add_subcommand("eval", "Run the method x metric grid, sweep and sensitivity");
    Common eval_opts;
    add_common(eval, eval_opts);
    std::vector<std::string> methods;
    std::string baseline, target, mode, models_dir;
    std::optional<std::size_t> steps, n_test, n_samp;
    bool skip_sweep = false, skip_sens = false;
    eval->add_option("--method", methods, "Method label, e.g. saliency or simplex@inv (repeatable)");
    eval->add_option("--baseline", baseline, "Baseline for integrated_gradients, ablation and occlusion");
    eval->add_option("--steps", steps, "Integration steps");
    eval->add_option("--target", target, "Target class, or 'predicted'");
    eval->add_option("--mode", mode, "Estimator: auto, exact or monte_carlo");
    eval->add_option("--n-test", n_test);
    eval->add_option("--n-samp", n_samp);
    eval->add_option("--models-dir", models_dir, "Load models saved by 'train' instead of training");
    eval->add_flag("--skip-sweep", skip_sweep);
    eval->add_flag("--skip-sensitivity", skip_sens);

    // enforce-sweep
    auto* sweep = app.add_subcommand("enforce-sweep", "Mean invariance of enforced explainers against n_inv");
    Common sweep_opts;
    add_common(sweep, sweep_opts);
    std::vector<std::string> sweep_methods;
    std::vector<std::size_t> n_inv;
    std::optional<std::uint64_t> enforce_seed;
    std::string sweep_models_dir;
    sweep->add_option("--method", sweep_methods, "Method to enforce (repeatable)");
    sweep->add_option("--enforce-n-inv", n_inv, "Sample counts, e.g. 1 2 4 8 16 32")->delimiter(',');
    sweep->add_option("--enforce-seed", enforce_seed);
    sweep->add_option("--models-dir", sweep_models_dir);

    // sensitivity
    auto* sens = app.add_subcommand("sensitivity", "Sensitivity against robustness with Pearson r");
    Common sens_opts;
    add_common(sens, sens_opts);
    std::vector<std::string> sens_methods;
    std::optional<double> epsilon;
    std::string sens_models_dir;
    sens->add_option("--method", sens_methods, "Method (repeatable)");
    sens->add_option("--epsilon", epsilon);
    sens->add_option("--models-dir", sens_models_dir);

    // report
    auto* rep = app.add_subcommand("report", "Summarise report CSVs into tables, a verdict grid and charts");
    std::vector<std::string> csvs;
    std::string rep_out;
    bool no_svg = false;
    double tolerance = 1e-3;
    rep->add_option("csv", csvs, "Report CSV files")->required()->check(CLI::ExistingFile);
    rep->add_option("-o,--out", rep_out, "Directory for summary.txt, verdict.csv and boxplot.svg");
    rep->add_flag("--no-svg", no_svg);
    rep->add_option("--tolerance", tolerance, "Slack on conditional guarantees");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*config_cmd) {
            std::cout << default_config_text();
            return 0;
        }
        if (*synth) {
            spec.kind = parse_dataset_kind(kind);
            const auto d = generate(spec);
            save_dataset(stem, d);
            std::cout << "wrote " << stem << ".eqx: " << d.train.size() << " train, " << d.test.size()
                      << " test, group " << d.group_kind << '\n';
            return 0;
        }
        if (*train_cmd) {
            const auto cfg = config_of(train_opts);
            const auto data = generate(cfg.dataset);
            for (auto k : cfg.models) {
                auto [model, result] = train_model(cfg, data, k);
                const auto label = to_string(k) + (cfg.augment ? "+aug" : "");
                save_trained(cfg.output_dir, label, model, result.checkpoints);
                const auto xt = inputs(data.test);
                const auto yt = labels(data.test);
                std::cout << label << ": test accuracy " << model.accuracy(xt, yt) << ", "
                          << result.checkpoints.size() << " checkpoints -> " << cfg.output_dir.string() << '\n';
            }
            return 0;
        }
        if (*eval) {
            ConfigOverrides o;
            if (!methods.empty()) o.emplace_back("methods.list", join(methods));
            if (steps) o.emplace_back("methods.steps", std::to_string(*steps));
            if (!target.empty()) o.emplace_back("methods.target", target);
            if (!mode.empty()) o.emplace_back("metrics.estimator", mode);
            if (n_test) o.emplace_back("metrics.n_test", std::to_string(*n_test));
            if (n_samp) o.emplace_back("metrics.n_samp", std::to_string(*n_samp));
            if (!models_dir.empty()) o.emplace_back("models.dir", models_dir);
            auto cfg = config_of(eval_opts, o);
            if (!baseline.empty()) apply_baseline(cfg.methods, baseline);
            RunStages st;
            st.sweep = !skip_sweep;
            st.sensitivity = !skip_sens;
            return finish(run(cfg, st, sink(eval_opts.quiet)), cfg);
        }
        if (*sweep) {
            ConfigOverrides o;
            if (!sweep_methods.empty()) o.emplace_back("enforce.methods", join(sweep_methods));
            if (!n_inv.empty()) {
                std::vector<std::string> s;
                for (auto n : n_inv) s.push_back(std::to_string(n));
                o.emplace_back("enforce.n_inv", join(s));
            }
            if (enforce_seed) o.emplace_back("enforce.seed", std::to_string(*enforce_seed));
            if (!sweep_models_dir.empty()) o.emplace_back("models.dir", sweep_models_dir);
            const auto cfg = config_of(sweep_opts, o);
            const auto r = run(cfg, RunStages{false, true, false}, sink(sweep_opts.quiet));
            for (const auto& p : r.sweep) {
                std::cout << p.model << ' ' << p.method << " n_inv=" << p.n_inv << " mean=" << p.invariance.mean
                          << " ci=[" << p.invariance.ci_low << ", " << p.invariance.ci_high << "]\n";
            }
            return finish(r, cfg);
        }
        if (*sens) {
            ConfigOverrides o;
            if (!sens_methods.empty()) o.emplace_back("sensitivity.methods", join(sens_methods));
            if (epsilon) o.emplace_back("sensitivity.epsilon", std::to_string(*epsilon));
            if (!sens_models_dir.empty()) o.emplace_back("models.dir", sens_models_dir);
            const auto cfg = config_of(sens_opts, o);
            const auto r = run(cfg, RunStages{false, false, true}, sink(sens_opts.quiet));
            for (const auto& c : r.correlations) {
                std::cout << c.model << ' ' << c.method << " pearson r = "
                          << (c.r ? std::to_string(*c.r) : std::string("undefined")) << '\n';
            }
            return finish(r, cfg);
        }
        if (*rep) {
            std::vector<std::filesystem::path> paths(csvs.begin(), csvs.end());
            const auto s = report(paths, rep_out, !no_svg, tolerance);
            std::cout << s.text;
            return s.any_violation ? 1 : 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << describe(e) << '\n';
        return 2;
    }
    return 0;
}
