// Python bindings: symmetry groups, synthetic datasets, trained experiments
// with their explainers and robustness metrics, and the batch harness.

#include <memory>
#include <optional>
#include <string>
#include <typeinfo>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "eqxai/data_synth.hpp"
#include "eqxai/errors.hpp"
#include "eqxai/harness.hpp"
#include "eqxai/invariance_enforcer.hpp"
#include "eqxai/robustness_metrics.hpp"
#include "eqxai/symmetry.hpp"

namespace py = pybind11;
using namespace eqxai;

namespace {

py::array_t<double> to_array(const std::vector<double>& v, std::vector<py::ssize_t> dims = {}) {
    if (dims.empty()) dims = {static_cast<py::ssize_t>(v.size())};
    py::array_t<double> out(dims);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::array_t<double> signal_array(const Signal& s) {
    std::vector<py::ssize_t> dims(s.shape.axes.begin(), s.shape.axes.end());
    dims.push_back(static_cast<py::ssize_t>(s.shape.channels));
    return to_array(s.values, dims);
}

std::vector<double> flat(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    return {a.data(), a.data() + a.size()};
}

// Python type of eqxai.Error; the module object keeps it alive.
py::handle error_type;

ConfigOverrides overrides_of(const std::map<std::string, std::string>& m) { return {m.begin(), m.end()}; }

py::dict row_dict(const ReportRow& r) {
    py::dict d;
    d["dataset"] = r.dataset;
    d["model"] = r.model;
    d["method"] = r.method;
    d["metric"] = r.metric;
    d["mode"] = r.mode;
    d["n_samp"] = r.n_samp;
    d["example_id"] = r.example_id;
    d["value"] = r.value;
    d["seed"] = r.seed;
    return d;
}

py::dict summary_dict(const Summary& s) {
    py::dict d;
    d["n"] = s.n;
    d["mean"] = s.mean;
    d["stddev"] = s.stddev;
    d["ci_low"] = s.ci_low;
    d["ci_high"] = s.ci_high;
    d["min"] = s.min;
    d["max"] = s.max;
    return d;
}

/// A configuration with its dataset and trained models, ready to explain
/// test examples. Owns everything the explainer suites refer to.
class Experiment {
public:
    Experiment(const std::string& ini, const std::map<std::string, std::string>& overrides)
        : cfg_(std::make_unique<ExperimentConfig>(parse_config(ini, overrides_of(overrides)))),
          data_(std::make_unique<Dataset>(generate(cfg_->dataset))),
          group_(std::make_unique<SymmetryGroup>(data_->group())) {
        for (auto kind : cfg_->models) {
            const auto label = to_string(kind) + (cfg_->augment ? "+aug" : "");
            auto entry = std::make_unique<Entry>();
            entry->label = label;
            if (cfg_->model_dir) {
                auto [m, ck] = load_trained(*cfg_->model_dir, label);
                entry->model = std::make_unique<Model>(std::move(m));
                entry->checkpoints = std::move(ck);
            } else {
                auto [m, result] = train_model(*cfg_, *data_, kind);
                entry->model = std::make_unique<Model>(std::move(m));
                entry->checkpoints = std::move(result.checkpoints);
            }
            entry->suite = std::make_unique<ExplainerSuite>(*cfg_, *data_, *entry->model, entry->checkpoints);
            entries_.push_back(std::move(entry));
        }
    }

    std::vector<std::string> models() const {
        std::vector<std::string> out;
        for (const auto& e : entries_) out.push_back(e->label);
        return out;
    }

    const Dataset& dataset() const { return *data_; }
    const SymmetryGroup& group() const { return *group_; }

    double accuracy(const std::string& model) const {
        const auto& m = *entry(model).model;
        return m.accuracy(inputs(data_->test), labels(data_->test));
    }

    void save(const std::string& model, const std::filesystem::path& dir) const {
        const auto& e = entry(model);
        save_trained(dir, e.label, *e.model, e.checkpoints);
    }

    py::array_t<double> explain(const std::string& model, const std::string& method, std::size_t example,
                                const std::optional<std::string>& element) const {
        const auto& s = sample(example);
        const auto m = parse_method(method);
        const auto e = explainer(model, m, s.label);
        const Signal x = element ? group_->act(group_->parse_element(*element), s.x) : s.x;
        const auto out = e(x);
        if (out.kind == ExplanationKind::feature_attribution) return signal_array(out.as_signal());
        return to_array(out.values);
    }

    double robustness(const std::string& model, const std::string& method, std::size_t example,
                      std::optional<std::size_t> n_samp, std::uint64_t seed) const {
        const auto& s = sample(example);
        const auto m = parse_method(method);
        const auto e = explainer(model, m, s.label);
        const auto est = estimator(n_samp, seed);
        if (m.family == MethodFamily::feature) {
            return equivariance_score(e, *group_, s.x, OutputAction::same_as_input, est).value;
        }
        const auto sim = m.family == MethodFamily::concept_based ? SimilarityKind::accuracy : SimilarityKind::cosine;
        return invariance_score(e, *group_, s.x, sim, est).value;
    }

    double model_invariance(const std::string& model, std::size_t example, std::optional<std::size_t> n_samp,
                            std::uint64_t seed) const {
        const auto& e = entry(model);
        return model_invariance_score(e.suite->predictor(), *group_, sample(example).x, estimator(n_samp, seed)).value;
    }

    double enforced_invariance(const std::string& model, const std::string& method, std::size_t example,
                               std::size_t n_inv, std::uint64_t seed) const {
        const auto& s = sample(example);
        const auto m = parse_method(method);
        const bool concept_method = m.family == MethodFamily::concept_based;
        const auto enforced = enforce(explainer(model, m, s.label, concept_method), *group_, n_inv, seed);
        Explainer e = enforced;
        if (concept_method) e = [enforced](const Signal& x) { return threshold_concepts(enforced(x)); };
        return invariance_score(e, *group_, s.x, concept_method ? SimilarityKind::accuracy : SimilarityKind::cosine,
                                estimator(std::nullopt, 0))
            .value;
    }

private:
    struct Entry {
        std::string label;
        std::unique_ptr<Model> model;
        std::vector<Checkpoint> checkpoints;
        std::unique_ptr<ExplainerSuite> suite;
    };

    const Entry& entry(const std::string& label) const {
        for (const auto& e : entries_) {
            if (e->label == label) return *e;
        }
        throw InvalidArgumentError("no model '" + label + "' in this experiment");
    }

    const Sample& sample(std::size_t i) const {
        if (i >= data_->test.size()) {
            throw InvalidArgumentError("example " + std::to_string(i) + " out of range (" +
                                       std::to_string(data_->test.size()) + " test examples)");
        }
        return data_->test[i];
    }

    Explainer explainer(const std::string& model, const MethodSpec& m, std::size_t label, bool scores = false) const {
        const auto& e = entry(model);
        e.suite->prepare(m);
        return e.suite->explainer(m, label, scores);
    }

    EstimatorConfig estimator(std::optional<std::size_t> n_samp, std::uint64_t seed) const {
        if (!n_samp) return EstimatorConfig::automatic(*group_, cfg_->n_samp, seed);
        EstimatorConfig c;
        c.mode = EstimatorMode::monte_carlo;
        c.n_samples = *n_samp;
        c.seed = seed;
        return c;
    }

    std::unique_ptr<ExperimentConfig> cfg_;
    std::unique_ptr<Dataset> data_;
    std::unique_ptr<SymmetryGroup> group_;
    std::vector<std::unique_ptr<Entry>> entries_;
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Invariance and equivariance of explanations for symmetry-invariant models";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    error_type = base.ptr();
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<InvalidArgumentError>(m, "InvalidArgumentError", base.ptr());
    py::register_exception<ShapeMismatchError>(m, "ShapeMismatchError", base.ptr());
    py::register_exception<GroupMismatchError>(m, "GroupMismatchError", base.ptr());
    // Nested context (which model, method and example failed) is kept in the message.
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            if (typeid(e) != typeid(Error)) throw;
            PyErr_SetString(error_type.ptr(), describe(e).c_str());
        }
    });

    py::class_<Signal>(m, "Signal")
        .def(py::init([](const std::vector<std::size_t>& axes, std::size_t channels,
                         py::array_t<double, py::array::c_style | py::array::forcecast> values,
                         std::optional<py::array_t<double, py::array::c_style | py::array::forcecast>> adjacency) {
                 return Signal(DomainShape(axes, channels), flat(values), adjacency ? flat(*adjacency) : std::vector<double>{});
             }),
             py::arg("axes"), py::arg("channels"), py::arg("values"), py::arg("adjacency") = py::none())
        .def_property_readonly("axes", [](const Signal& s) { return s.shape.axes; })
        .def_property_readonly("channels", [](const Signal& s) { return s.shape.channels; })
        .def_property_readonly("values", &signal_array, "Array of shape axes + (channels,)")
        .def_property_readonly("adjacency", [](const Signal& s) -> py::object {
            if (!s.has_adjacency()) return py::none();
            const auto n = static_cast<py::ssize_t>(s.shape.points());
            return to_array(s.adjacency, {n, n});
        });

    py::class_<SymmetryGroup>(m, "Group")
        .def(py::init([](const std::string& kind, const std::vector<std::size_t>& axes, std::size_t channels) {
                 return make_group(kind, DomainShape(axes, channels));
             }),
             py::arg("kind"), py::arg("axes"), py::arg("channels") = 1)
        .def_property_readonly("id", &SymmetryGroup::id)
        .def_property_readonly("order", &SymmetryGroup::order)
        .def("enumerate",
             [](const SymmetryGroup& g) {
                 std::vector<std::string> out;
                 for (const auto& e : g.enumerate()) out.push_back(to_param_string(e));
                 return out;
             })
        .def(
            "sample",
            [](const SymmetryGroup& g, std::uint64_t seed, std::size_t n, bool without_replacement) {
                std::vector<std::string> out;
                for (const auto& e : g.sample(seed, n, without_replacement)) out.push_back(to_param_string(e));
                return out;
            },
            py::arg("seed"), py::arg("n"), py::arg("without_replacement") = false)
        .def("act", [](const SymmetryGroup& g, const std::string& element, const Signal& x) {
            return g.act(g.parse_element(element), x);
        });

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("kind", [](const Dataset& d) { return to_string(d.spec.kind); })
        .def_property_readonly("classes", [](const Dataset& d) { return d.classes; })
        .def_property_readonly("group_kind", [](const Dataset& d) { return d.group_kind; })
        .def_property_readonly("concept_names", [](const Dataset& d) { return d.concept_names; })
        .def_property_readonly("n_train", [](const Dataset& d) { return d.train.size(); })
        .def_property_readonly("n_test", [](const Dataset& d) { return d.test.size(); })
        .def("group", &Dataset::group)
        .def("train_example", [](const Dataset& d, std::size_t i) { return std::make_pair(d.train.at(i).x, d.train.at(i).label); })
        .def("test_example", [](const Dataset& d, std::size_t i) { return std::make_pair(d.test.at(i).x, d.test.at(i).label); });

    m.def(
        "generate",
        [](const std::string& kind, std::size_t n_train, std::size_t n_test, double noise, std::uint64_t seed) {
            DatasetSpec s;
            s.kind = parse_dataset_kind(kind);
            s.n_train = n_train;
            s.n_test = n_test;
            s.noise_level = noise;
            s.seed = seed;
            return generate(s);
        },
        py::arg("kind"), py::arg("n_train") = 512, py::arg("n_test") = 256, py::arg("noise") = 0.05,
        py::arg("seed") = 0, "Generate a synthetic dataset");

    py::class_<Experiment>(m, "Experiment")
        .def(py::init<const std::string&, const std::map<std::string, std::string>&>(), py::arg("config") = "",
             py::arg("overrides") = std::map<std::string, std::string>{},
             "Parse an INI configuration, generate its dataset and train (or load) its models",
             py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("models", &Experiment::models)
        .def_property_readonly("dataset", &Experiment::dataset, py::return_value_policy::reference_internal)
        .def_property_readonly("group", &Experiment::group, py::return_value_policy::reference_internal)
        .def("accuracy", &Experiment::accuracy, py::arg("model"))
        .def("save", &Experiment::save, py::arg("model"), py::arg("directory"))
        .def("explain", &Experiment::explain, py::arg("model"), py::arg("method"), py::arg("example"),
             py::arg("element") = py::none(), "Explanation of a test example, optionally transformed by a group element")
        .def("robustness", &Experiment::robustness, py::arg("model"), py::arg("method"), py::arg("example"),
             py::arg("n_samp") = py::none(), py::arg("seed") = 0,
             "Equivariance for feature methods, invariance otherwise")
        .def("model_invariance", &Experiment::model_invariance, py::arg("model"), py::arg("example"),
             py::arg("n_samp") = py::none(), py::arg("seed") = 0)
        .def("enforced_invariance", &Experiment::enforced_invariance, py::arg("model"), py::arg("method"),
             py::arg("example"), py::arg("n_inv"), py::arg("seed") = 0);

    m.def(
        "run",
        [](const std::string& ini, const std::map<std::string, std::string>& overrides, bool grid, bool sweep,
           bool sensitivity) {
            RunResult r;
            {
                py::gil_scoped_release release;
                r = run(parse_config(ini, overrides_of(overrides)), RunStages{grid, sweep, sensitivity});
            }
            py::dict d;
            py::list rows, points, corr;
            for (const auto& row : r.rows) rows.append(row_dict(row));
            for (const auto& p : r.sweep) {
                py::dict x;
                x["model"] = p.model;
                x["method"] = p.method;
                x["n_inv"] = p.n_inv;
                x["mode"] = p.enforce_mode;
                x["invariance"] = summary_dict(p.invariance);
                points.append(x);
            }
            for (const auto& c : r.correlations) {
                py::dict x;
                x["model"] = c.model;
                x["method"] = c.method;
                x["n"] = c.n;
                x["r"] = c.r ? py::cast(*c.r) : py::none();
                corr.append(x);
            }
            d["rows"] = rows;
            d["sweep"] = points;
            d["correlations"] = corr;
            d["failures"] = r.failures;
            d["ok"] = r.ok();
            return d;
        },
        py::arg("config") = "", py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("grid") = true,
        py::arg("sweep") = true, py::arg("sensitivity") = true,
        "Run an experiment and write its report files to experiment.output_dir");

    m.def(
        "report",
        [](const std::vector<std::filesystem::path>& csvs, const std::filesystem::path& out_dir, bool svg,
           double tolerance) {
            const auto s = report(csvs, out_dir, svg, tolerance);
            py::dict d;
            d["text"] = s.text;
            d["any_violation"] = s.any_violation;
            d["max_seed_drift"] = s.max_seed_drift ? py::cast(*s.max_seed_drift) : py::none();
            d["max_replicate_drift"] = s.max_replicate_drift ? py::cast(*s.max_replicate_drift) : py::none();
            return d;
        },
        py::arg("csvs"), py::arg("out_dir") = std::filesystem::path{}, py::arg("svg") = true,
        py::arg("tolerance") = 1e-3);

    m.def("read_report_csv", [](const std::filesystem::path& p) {
        py::list rows;
        for (const auto& r : read_report_csv(p)) rows.append(row_dict(r));
        return rows;
    });
    m.def("default_config", &default_config_text, "Every configuration key with its default, as INI text");
    m.def("hoeffding_bound", &hoeffding_bound, py::arg("n_test"), py::arg("n_samp"), py::arg("t"));
    m.def("hoeffding_deviation", &hoeffding_deviation, py::arg("n_terms"), py::arg("delta") = 1e-4);
    m.def(
        "similarity",
        [](const std::string& kind, const std::vector<double>& a, const std::vector<double>& b) {
            if (kind != "cosine" && kind != "accuracy") {
                throw InvalidArgumentError("similarity kind must be cosine or accuracy, got '" + kind + "'");
            }
            return similarity(kind == "accuracy" ? SimilarityKind::accuracy : SimilarityKind::cosine, a, b);
        },
        py::arg("kind"), py::arg("a"), py::arg("b"));
    m.def("summarize", [](const std::vector<double>& v) { return summary_dict(summarize(v)); });
}
