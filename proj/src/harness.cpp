#include "eqxai/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "eqxai/concept_probes.hpp"
#include "eqxai/container.hpp"
#include "eqxai/errors.hpp"
#include "eqxai/example_importance.hpp"
#include "eqxai/invariance_enforcer.hpp"
#include "eqxai/parallel.hpp"
#include "report_internal.hpp"

namespace eqxai {

namespace pt = boost::property_tree;

// ---------------------------------------------------------------- methods

namespace {

const std::set<std::string> kFeature = {"saliency", "integrated_gradients", "input_x_gradient", "gradient_shap",
                                        "ablation", "permutation",          "occlusion"};
const std::set<std::string> kExample = {"influence", "tracin", "simplex", "rep_sim"};
const std::set<std::string> kConcept = {"cav", "car"};
// Feature methods whose baseline can be chosen.
const std::set<std::string> kWithBaseline = {"integrated_gradients", "ablation", "occlusion"};

bool representation_based(const std::string& name) {
    return name == "simplex" || name == "rep_sim" || kConcept.count(name);
}

} // namespace

std::string MethodSpec::label() const {
    std::string s = name;
    if (baseline) s += "[" + to_string(*baseline) + "]";
    if (tap) s += "@" + to_string(*tap);
    return s;
}

MethodSpec parse_method(std::string_view label) {
    std::string text(label);
    boost::trim(text);
    MethodSpec m;
    const auto at = text.find('@');
    if (at != std::string::npos) {
        m.tap = parse_tap(text.substr(at + 1));
        text.resize(at);
    }
    const auto open = text.find('[');
    if (open != std::string::npos) {
        if (text.back() != ']') throw ConfigError("method '" + std::string(label) + "': unclosed baseline bracket");
        m.baseline = parse_baseline_mode(text.substr(open + 1, text.size() - open - 2));
        text.resize(open);
    }
    m.name = text;
    if (kFeature.count(m.name)) {
        m.family = MethodFamily::feature;
    } else if (kExample.count(m.name)) {
        m.family = MethodFamily::example;
    } else if (kConcept.count(m.name)) {
        m.family = MethodFamily::concept_based;
    } else {
        throw ConfigError("unknown method '" + std::string(label) + "'");
    }
    if (m.baseline && !kWithBaseline.count(m.name)) {
        throw ConfigError("method '" + m.name + "' does not take a baseline");
    }
    if (representation_based(m.name)) {
        if (!m.tap) throw ConfigError("method '" + m.name + "' needs a tap, e.g. " + m.name + "@inv");
        if (*m.tap == Tap::logits) throw ConfigError("method '" + m.name + "': use the equiv or inv tap");
    } else if (m.tap) {
        throw ConfigError("method '" + m.name + "' does not read a representation tap");
    }
    if (m.baseline == BaselineMode::zero) m.baseline.reset();
    return m;
}

std::string metric_for(const MethodSpec& m) { return m.family == MethodFamily::feature ? "equiv" : "inv"; }

Guarantee GuaranteeInfo::relevant() const {
    return computation == "gradient" || computation == "perturbation" ? equivariant : invariant;
}

bool GuaranteeInfo::applies() const {
    const auto g = relevant();
    return g == Guarantee::unconditional || (g == Guarantee::conditional && condition_met);
}

std::string symbol(Guarantee g) {
    switch (g) {
    case Guarantee::unconditional: return "✓";
    case Guarantee::conditional: return "~";
    case Guarantee::none: break;
    }
    return "✗";
}

GuaranteeInfo guarantee_of(const MethodSpec& m) {
    GuaranteeInfo g;
    if (m.family == MethodFamily::feature) {
        g.type = "feature importance";
        const bool gradient = m.name == "saliency" || m.name == "integrated_gradients" ||
                              m.name == "input_x_gradient" || m.name == "gradient_shap";
        g.computation = gradient ? "gradient" : "perturbation";
        g.equivariant = Guarantee::conditional;
        // Equivariance needs a baseline fixed by every group element; all
        // groups here act by permutations, the other condition.
        if (m.name == "gradient_shap" || m.name == "permutation") {
            g.condition_met = false;
        } else {
            Baseline b;
            b.mode = m.baseline.value_or(BaselineMode::zero);
            g.condition_met = b.invariant();
        }
    } else if (m.name == "influence" || m.name == "tracin") {
        g.type = "example importance";
        g.computation = "loss";
        g.invariant = Guarantee::unconditional;
        g.condition_met = true;
    } else {
        g.type = m.family == MethodFamily::example ? "example importance" : "concept-based";
        g.computation = "representation";
        g.invariant = Guarantee::conditional;
        g.condition_met = m.tap == Tap::inv;
    }
    return g;
}

// ---------------------------------------------------------------- config

namespace {

const std::map<std::string, std::set<std::string>> kSchema = {
    {"experiment", {"name", "seed", "output_dir"}},
    {"dataset", {"kind", "n_train", "n_test", "noise_level", "seed"}},
    {"models", {"kinds", "dir", "augment"}},
    {"training", {"optimizer", "lr", "weight_decay", "epochs", "batch_size", "checkpoint_every"}},
    {"methods", {"list", "steps", "window", "target", "example_subset", "simplex_epochs"}},
    {"metrics", {"estimator", "n_test", "n_samp", "model_invariance"}},
    {"sensitivity", {"methods", "epsilon", "perturbations"}},
    {"enforce", {"methods", "n_inv", "seed"}},
    {"output", {"svg"}},
    {"assertions", {"guarantees", "sweep", "tolerance"}},
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts, out;
    boost::split(parts, s, boost::is_any_of(","));
    for (auto& p : parts) {
        boost::trim(p);
        if (!p.empty()) out.push_back(p);
    }
    return out;
}

template <class T>
T get(const pt::ptree& tree, const std::string& key, T fallback) {
    const auto v = tree.get_optional<std::string>(key);
    if (!v) return fallback;
    std::string text = boost::trim_copy(*v);
    if constexpr (std::is_same_v<T, bool>) {
        boost::to_lower(text);
        if (text == "true" || text == "yes" || text == "1" || text == "on") return true;
        if (text == "false" || text == "no" || text == "0" || text == "off") return false;
        throw ConfigError(key + ": expected a boolean, got '" + *v + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else {
        T out{};
        const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
        if (ec != std::errc() || p != text.data() + text.size()) {
            throw ConfigError(key + ": cannot parse '" + *v + "'");
        }
        return out;
    }
}

std::vector<MethodSpec> methods_of(const std::vector<std::string>& labels) {
    std::vector<MethodSpec> out;
    for (const auto& l : labels) out.push_back(parse_method(l));
    return out;
}

std::vector<ModelKind> default_models(DatasetKind kind) {
    switch (kind) {
    case DatasetKind::ecg_like: return {ModelKind::all_cnn_1d, ModelKind::flatten_cnn_1d};
    case DatasetKind::toy_images: return {ModelKind::all_cnn_2d, ModelKind::flatten_cnn_2d};
    case DatasetKind::point_clouds: return {ModelKind::deep_set};
    case DatasetKind::token_bags: return {ModelKind::bow_mlp};
    case DatasetKind::motif_graphs: return {ModelKind::graph_conv};
    }
    return {};
}

const char* kDefaultMethods =
    "saliency, integrated_gradients, input_x_gradient, gradient_shap, ablation, permutation, occlusion, "
    "influence, tracin, simplex@inv, simplex@equiv, rep_sim@inv, rep_sim@equiv, "
    "cav@inv, cav@equiv, car@inv, car@equiv";
const char* kDefaultSensitivity = "integrated_gradients, gradient_shap, permutation, ablation, occlusion";
const char* kDefaultEnforce = "rep_sim@equiv, cav@equiv";

// Occlusion windows are only closed under the group on grids with a
// translation group; sets, graphs and token bags reject it.
bool supports_occlusion(DatasetKind kind) { return kind == DatasetKind::ecg_like || kind == DatasetKind::toy_images; }

std::vector<MethodSpec> defaults_for(DatasetKind kind, const char* list) {
    auto out = methods_of(split_list(list));
    if (!supports_occlusion(kind)) {
        std::erase_if(out, [](const MethodSpec& m) { return m.name == "occlusion"; });
    }
    return out;
}
const char* kDefaultNInv = "1, 2, 4, 8, 16, 32";

ExperimentConfig from_tree(const pt::ptree& tree) {
    for (const auto& [section, body] : tree) {
        const auto it = kSchema.find(section);
        if (it == kSchema.end()) throw ConfigError("unknown config section [" + section + "]");
        if (!body.data().empty() && body.empty()) {
            throw ConfigError("key '" + section + "' must live inside a section");
        }
        for (const auto& [key, value] : body) {
            if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
        }
    }
    ExperimentConfig c;
    c.name = get<std::string>(tree, "experiment.name", c.name);
    c.seed = get<std::uint64_t>(tree, "experiment.seed", c.seed);
    c.output_dir = get<std::string>(tree, "experiment.output_dir", c.output_dir.string());

    c.dataset.kind = parse_dataset_kind(get<std::string>(tree, "dataset.kind", "ecg_like"));
    c.dataset.n_train = get<std::size_t>(tree, "dataset.n_train", c.dataset.n_train);
    c.n_test = get<std::size_t>(tree, "metrics.n_test", c.n_test);
    c.dataset.n_test = get<std::size_t>(tree, "dataset.n_test", c.n_test);
    c.dataset.noise_level = get<double>(tree, "dataset.noise_level", c.dataset.noise_level);
    c.dataset.seed = get<std::uint64_t>(tree, "dataset.seed", c.seed);

    if (const auto kinds = tree.get_optional<std::string>("models.kinds")) {
        for (const auto& k : split_list(*kinds)) c.models.push_back(parse_model_kind(k));
    } else {
        c.models = default_models(c.dataset.kind);
    }
    if (const auto dir = tree.get_optional<std::string>("models.dir"); dir && !boost::trim_copy(*dir).empty()) {
        c.model_dir = boost::trim_copy(*dir);
    }
    c.augment = get<bool>(tree, "models.augment", false);

    const auto opt = get<std::string>(tree, "training.optimizer", "adam");
    if (opt == "adam") {
        c.training.optimizer = OptimizerKind::adam;
    } else if (opt == "sgd") {
        c.training.optimizer = OptimizerKind::sgd;
    } else {
        throw ConfigError("training.optimizer: expected adam or sgd, got '" + opt + "'");
    }
    c.training.lr = get<double>(tree, "training.lr", c.training.lr);
    c.training.weight_decay = get<double>(tree, "training.weight_decay", c.training.weight_decay);
    c.training.epochs = get<std::size_t>(tree, "training.epochs", c.training.epochs);
    c.training.batch_size = get<std::size_t>(tree, "training.batch_size", c.training.batch_size);
    c.training.checkpoint_every = get<std::size_t>(tree, "training.checkpoint_every", c.training.checkpoint_every);

    const auto method_list = tree.get_optional<std::string>("methods.list");
    c.methods = method_list ? methods_of(split_list(*method_list)) : defaults_for(c.dataset.kind, kDefaultMethods);
    c.ig_steps = get<std::size_t>(tree, "methods.steps", c.ig_steps);
    c.occlusion_window = get<std::size_t>(tree, "methods.window", c.occlusion_window);
    const auto target = get<std::string>(tree, "methods.target", "predicted");
    if (target != "predicted") c.target = get<std::size_t>(tree, "methods.target", 0);
    c.example_subset = get<std::size_t>(tree, "methods.example_subset", c.example_subset);
    c.simplex_epochs = get<std::size_t>(tree, "methods.simplex_epochs", c.simplex_epochs);

    c.estimator = get<std::string>(tree, "metrics.estimator", c.estimator);
    c.n_samp = get<std::size_t>(tree, "metrics.n_samp", c.n_samp);
    c.model_invariance = get<bool>(tree, "metrics.model_invariance", c.model_invariance);

    const auto sens_list = tree.get_optional<std::string>("sensitivity.methods");
    c.sensitivity_methods =
        sens_list ? methods_of(split_list(*sens_list)) : defaults_for(c.dataset.kind, kDefaultSensitivity);
    c.sensitivity_epsilon = get<double>(tree, "sensitivity.epsilon", c.sensitivity_epsilon);
    c.sensitivity_perturbations = get<std::size_t>(tree, "sensitivity.perturbations", c.sensitivity_perturbations);

    c.enforce_methods = methods_of(split_list(get<std::string>(tree, "enforce.methods", kDefaultEnforce)));
    for (const auto& n : split_list(get<std::string>(tree, "enforce.n_inv", kDefaultNInv))) {
        pt::ptree tmp;
        tmp.put("v", n);
        c.enforce_n_inv.push_back(get<std::size_t>(tmp, "v", 0));
    }
    c.enforce_seed = get<std::uint64_t>(tree, "enforce.seed", c.enforce_seed);

    c.svg = get<bool>(tree, "output.svg", c.svg);
    c.assert_guarantees = get<bool>(tree, "assertions.guarantees", c.assert_guarantees);
    c.assert_sweep = get<bool>(tree, "assertions.sweep", c.assert_sweep);
    c.tolerance = get<double>(tree, "assertions.tolerance", c.tolerance);
    c.validate();
    return c;
}

} // namespace

void ExperimentConfig::validate() const {
    if (models.empty()) throw ConfigError("no models configured");
    if (methods.empty()) throw ConfigError("the method list is empty");
    if (dataset.n_train < 1 || dataset.n_test < 1) throw ConfigError("dataset sizes must be at least 1");
    if (n_test < 1) throw ConfigError("metrics.n_test must be at least 1");
    if (n_samp < 1) throw ConfigError("metrics.n_samp must be at least 1");
    if (estimator != "auto") parse_estimator_mode(estimator);
    if (ig_steps < 1) throw ConfigError("methods.steps must be at least 1");
    if (example_subset < 2) throw ConfigError("methods.example_subset must be at least 2");
    if (!(sensitivity_epsilon > 0.0)) throw ConfigError("sensitivity.epsilon must be positive");
    if (!(tolerance >= 0.0)) throw ConfigError("assertions.tolerance must be non-negative");
    if (!supports_occlusion(dataset.kind)) {
        for (const auto* list : {&methods, &sensitivity_methods, &enforce_methods}) {
            for (const auto& m : *list) {
                if (m.name == "occlusion") {
                    throw ConfigError("occlusion needs a grid domain and is not available for " +
                                      to_string(dataset.kind));
                }
            }
        }
    }
    for (auto n : enforce_n_inv) {
        if (n < 1) throw ConfigError("enforce.n_inv entries must be at least 1");
    }
    if (!std::is_sorted(enforce_n_inv.begin(), enforce_n_inv.end())) {
        throw ConfigError("enforce.n_inv must be increasing");
    }
    for (auto kind : models) {
        const auto expected = default_models(dataset.kind);
        const bool one_d = kind == ModelKind::all_cnn_1d || kind == ModelKind::flatten_cnn_1d;
        const bool two_d = kind == ModelKind::all_cnn_2d || kind == ModelKind::flatten_cnn_2d;
        const bool ok = std::find(expected.begin(), expected.end(), kind) != expected.end() ||
                        (one_d && dataset.kind == DatasetKind::ecg_like) ||
                        (two_d && dataset.kind == DatasetKind::toy_images);
        if (!ok) {
            throw ConfigError("model " + to_string(kind) + " does not fit dataset " + to_string(dataset.kind));
        }
    }
}

ExperimentConfig parse_config(std::string_view ini, const ConfigOverrides& overrides) {
    pt::ptree tree;
    std::istringstream in{std::string(ini)};
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    for (const auto& [key, value] : overrides) {
        if (std::count(key.begin(), key.end(), '.') != 1) {
            throw ConfigError("override '" + key + "' must look like section.key");
        }
        tree.put(key, value);
    }
    return from_tree(tree);
}

ExperimentConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), overrides);
}

std::string default_config_text() {
    std::ostringstream s;
    s << "[experiment]\nname = experiment\nseed = 0\noutput_dir = eqxai_out\n\n"
      << "[dataset]\n; ecg_like, toy_images, point_clouds, token_bags, motif_graphs\nkind = ecg_like\n"
      << "n_train = 512\n; defaults to metrics.n_test\nn_test = 256\nnoise_level = 0.05\n"
      << "; defaults to experiment.seed\nseed = 0\n\n"
      << "[models]\n; defaults depend on the dataset\nkinds = all_cnn_1d, flatten_cnn_1d\n"
      << "; load <dir>/<model>.eqx instead of training\ndir =\naugment = false\n\n"
      << "[training]\noptimizer = adam\nlr = 0.001\nweight_decay = 1e-05\nepochs = 30\nbatch_size = 32\n"
      << "checkpoint_every = 5\n\n"
      << "[methods]\nlist = " << kDefaultMethods << "\nsteps = 64\nwindow = 3\ntarget = predicted\n"
      << "example_subset = 100\nsimplex_epochs = 1000\n\n"
      << "[metrics]\n; auto, exact, monte_carlo\nestimator = auto\nn_test = 256\nn_samp = 50\n"
      << "model_invariance = true\n\n"
      << "[sensitivity]\nmethods = " << kDefaultSensitivity << "\nepsilon = 0.02\nperturbations = 10\n\n"
      << "[enforce]\nmethods = " << kDefaultEnforce << "\nn_inv = " << kDefaultNInv << "\nseed = 0\n\n"
      << "[output]\nsvg = true\n\n"
      << "[assertions]\nguarantees = true\nsweep = true\ntolerance = 0.001\n";
    return s.str();
}

// ---------------------------------------------------------------- models

namespace {

std::string model_label(const ExperimentConfig& c, ModelKind kind) {
    return to_string(kind) + (c.augment ? "+aug" : "");
}

std::uint64_t model_seed(const ExperimentConfig& c, ModelKind kind) {
    return c.seed * 1000003ULL + 17 * (static_cast<std::uint64_t>(kind) + 1);
}

} // namespace

std::pair<Model, TrainResult> train_model(const ExperimentConfig& config, const Dataset& data, ModelKind kind) {
    auto model = Model::build(kind, data.shape, data.classes, {}, model_seed(config, kind));
    const auto group = data.group();
    TrainConfig tc = config.training;
    tc.seed = model_seed(config, kind) + 1;
    tc.augment = config.augment ? &group : nullptr;
    const auto xs = inputs(data.train);
    const auto ys = labels(data.train);
    auto result = train(model, xs, ys, tc);
    return {std::move(model), std::move(result)};
}

void save_trained(const std::filesystem::path& dir, const std::string& label, const Model& model,
                  const std::vector<Checkpoint>& checkpoints) {
    std::filesystem::create_directories(dir);
    model.save(dir / (label + ".eqx"));
    for (const auto& ck : checkpoints) {
        save_container(dir / (label + ".ckpt" + std::to_string(ck.epoch) + ".eqx"), checkpoint_container(model, ck));
    }
}

std::pair<Model, std::vector<Checkpoint>> load_trained(const std::filesystem::path& dir, const std::string& label) {
    auto model = Model::load(dir / (label + ".eqx"));
    std::vector<Checkpoint> cks;
    const std::string prefix = label + ".ckpt";
    if (std::filesystem::is_directory(dir)) {
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            const auto name = entry.path().filename().string();
            if (name.rfind(prefix, 0) == 0 && entry.path().extension() == ".eqx") {
                cks.push_back(checkpoint_from_container(load_container(entry.path())));
            }
        }
    }
    std::sort(cks.begin(), cks.end(), [](const Checkpoint& a, const Checkpoint& b) { return a.epoch < b.epoch; });
    return {std::move(model), std::move(cks)};
}

// ---------------------------------------------------------------- pipeline

ExplainerSuite::ExplainerSuite(const ExperimentConfig& cfg, const Dataset& data, const Model& model,
                               std::vector<Checkpoint> checkpoints)
    : cfg_(cfg), data_(data), model_(model), checkpoints_(std::move(checkpoints)), predictor_(model),
      train_x_(inputs(data.train)) {
    const auto n = std::min(cfg.example_subset, data.train.size());
    for (std::size_t i = 0; i < n; ++i) {
        subset_.xs.push_back(data.train[i].x);
        subset_.ys.push_back(data.train[i].label);
    }
    feature_.steps = cfg.ig_steps;
    feature_.window = cfg.occlusion_window;
    feature_.shap.seed = cfg.seed;
    feature_.reference = train_x_;
}

ExplainerSuite::~ExplainerSuite() = default;

void ExplainerSuite::prepare(const MethodSpec& m) {
    if (m.name == "influence" && !influence_) {
        influence_ = std::make_unique<InfluenceFunctions>(model_, subset_);
    } else if (m.name == "tracin" && !tracin_) {
        if (checkpoints_.empty()) throw InvalidArgumentError("tracin needs training checkpoints");
        tracin_ = std::make_unique<TracIn>(model_, checkpoints_, subset_);
    } else if ((m.name == "simplex" || m.name == "rep_sim") && !subset_reps_.count(*m.tap)) {
        subset_reps_[*m.tap] = representations(model_, *m.tap, subset_.xs);
    } else if (m.family == MethodFamily::concept_based) {
        const auto kind = parse_concept_kind(m.name);
        const auto key = std::make_pair(kind, *m.tap);
        if (concepts_.count(key)) return;
        const auto reps = representations(model_, *m.tap, train_x_);
        std::vector<ConceptClassifier> cs;
        for (std::size_t c = 0; c < data_.concept_names.size(); ++c) {
            std::vector<int> lab;
            for (const auto& s : data_.train) lab.push_back(s.concepts[c]);
            CavConfig cav;
            cav.seed = cfg_.seed;
            auto clf = kind == ConceptKind::cav ? fit_cav(reps, lab, cav) : fit_car(reps, lab);
            clf.name = data_.concept_names[c];
            cs.push_back(std::move(clf));
        }
        concepts_[key] = std::move(cs);
    }
}

Explainer ExplainerSuite::explainer(const MethodSpec& m, std::size_t label, bool scores) const {
    if (m.family == MethodFamily::feature) {
        auto fc = feature_;
        fc.baseline.mode = m.baseline.value_or(BaselineMode::zero);
        fc.baseline.seed = cfg_.seed;
        const auto method = parse_feature_method(m.name);
        const auto target = cfg_.target;
        return [this, fc, method, target](const Signal& x) {
            return Explanation::feature(attribute(method, predictor_, x, target, fc).scores);
        };
    }
    auto unprepared = [&] { return InvalidArgumentError("method " + m.label() + " used before prepare()"); };
    if (m.name == "influence") {
        if (!influence_) throw unprepared();
        return [this, label](const Signal& x) {
            return Explanation::vector(ExplanationKind::example_importance, influence_->scores(x, label).scores);
        };
    }
    if (m.name == "tracin") {
        if (!tracin_) throw unprepared();
        return [this, label](const Signal& x) {
            return Explanation::vector(ExplanationKind::example_importance, tracin_->scores(x, label).scores);
        };
    }
    const Tap tap = *m.tap;
    if (m.name == "simplex" || m.name == "rep_sim") {
        if (!subset_reps_.count(tap)) throw unprepared();
        const auto* reps = &subset_reps_.at(tap);
        const bool simplex = m.name == "simplex";
        SimplexConfig sc;
        sc.epochs = cfg_.simplex_epochs;
        return [this, reps, simplex, sc, tap](const Signal& x) {
            const auto r = model_.representation(tap, x);
            auto s = simplex ? simplex_weights(*reps, r, sc) : representation_similarity(*reps, r);
            return Explanation::vector(ExplanationKind::example_importance, std::move(s.scores));
        };
    }
    const auto it = concepts_.find({parse_concept_kind(m.name), tap});
    if (it == concepts_.end()) throw unprepared();
    const auto* cs = &it->second;
    return [this, cs, tap, scores](const Signal& x) {
        const auto r = model_.representation(tap, x);
        std::vector<double> v;
        for (const auto& c : *cs) {
            const double d = c.decision(r);
            v.push_back(scores ? d : (d > 0.0 ? 1.0 : 0.0));
        }
        return Explanation::vector(scores ? ExplanationKind::concept_scores : ExplanationKind::concept_presence,
                                   std::move(v));
    };
}

namespace {

EstimatorConfig estimator_for(const ExperimentConfig& c, const SymmetryGroup& g, std::size_t example) {
    const std::uint64_t seed = c.seed * 1000003ULL + example;
    if (c.estimator == "auto") return EstimatorConfig::automatic(g, c.n_samp, seed);
    EstimatorConfig e;
    e.mode = parse_estimator_mode(c.estimator);
    e.n_samples = c.n_samp;
    e.seed = seed;
    return e;
}

MetricEstimate robustness(const MethodSpec& m, const Explainer& e, const SymmetryGroup& g, const Signal& x,
                          const EstimatorConfig& est) {
    if (m.family == MethodFamily::feature) return equivariance_score(e, g, x, OutputAction::same_as_input, est);
    const auto sim = m.family == MethodFamily::concept_based ? SimilarityKind::accuracy : SimilarityKind::cosine;
    return invariance_score(e, g, x, sim, est);
}

// Runs body(i) for every test example, tagging errors with the context.
template <class Body>
void for_examples(std::size_t n, const std::string& context, Body body) {
    parallel_for(n, [&](std::size_t i) {
        try {
            body(i);
        } catch (const std::exception&) {
            std::throw_with_nested(Error(context + ", example " + std::to_string(i)));
        }
    });
}

std::string elapsed(std::chrono::steady_clock::time_point t0) {
    const auto s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f s", s);
    return buf;
}

// Caches a deterministic explainer on its input signal.
Explainer memoised(Explainer inner) {
    struct Cache {
        std::mutex mu;
        std::map<std::pair<std::vector<double>, std::vector<double>>, Explanation> entries;
    };
    auto cache = std::make_shared<Cache>();
    return [inner = std::move(inner), cache](const Signal& x) {
        auto key = std::make_pair(x.values, x.adjacency);
        {
            std::lock_guard lock(cache->mu);
            if (const auto it = cache->entries.find(key); it != cache->entries.end()) return it->second;
        }
        auto e = inner(x);
        std::lock_guard lock(cache->mu);
        cache->entries.emplace(std::move(key), e);
        return e;
    };
}

struct Trained {
    ModelKind kind;
    std::string label;
    Model model;
    std::vector<Checkpoint> checkpoints;
};

} // namespace

RunResult run(const ExperimentConfig& config, const RunStages& stages, const LogSink& log) {
    config.validate();
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };
    RunResult out;
    const auto data = generate(config.dataset);
    const auto group = data.group();
    const std::string dataset = to_string(config.dataset.kind);
    const std::size_t n_test = std::min(config.n_test, data.test.size());
    say("dataset " + dataset + ": " + std::to_string(data.train.size()) + " train, " + std::to_string(n_test) +
        " test, group " + group.id());

    std::vector<Trained> models;
    for (auto kind : config.models) {
        const auto label = model_label(config, kind);
        if (config.model_dir) {
            auto [m, cks] = load_trained(*config.model_dir, label);
            models.push_back({kind, label, std::move(m), std::move(cks)});
        } else {
            auto [m, result] = train_model(config, data, kind);
            models.push_back({kind, label, std::move(m), std::move(result.checkpoints)});
        }
        const auto xt = inputs(data.test);
        const auto yt = labels(data.test);
        say("model " + label + ": test accuracy " + detail::format_value(models.back().model.accuracy(xt, yt)));
    }

    auto add_rows = [&](const std::string& model, const std::string& method, const std::string& metric,
                        const std::vector<MetricEstimate>& est) {
        for (std::size_t i = 0; i < est.size(); ++i) {
            out.rows.push_back({dataset, model, method, metric, to_string(est[i].mode), est[i].n_terms, i,
                                est[i].value, config.seed});
        }
    };

    for (const auto& t : models) {
        ExplainerSuite ctx(config, data, t.model, t.checkpoints);

        if (stages.grid && config.model_invariance) {
            std::vector<MetricEstimate> est(n_test);
            for_examples(n_test, t.label + " model invariance", [&](std::size_t i) {
                est[i] = model_invariance_score(ctx.predictor(), group, data.test[i].x,
                                                estimator_for(config, group, i));
            });
            add_rows(t.label, "model", "model_inv", est);
        }

        if (stages.grid) {
            for (const auto& m : config.methods) {
                const auto context = t.label + ", method " + m.label();
                try {
                    ctx.prepare(m);
                } catch (const std::exception&) {
                    std::throw_with_nested(Error(context));
                }
                const auto t0 = std::chrono::steady_clock::now();
                std::vector<MetricEstimate> est(n_test);
                for_examples(n_test, context, [&](std::size_t i) {
                    const auto& s = data.test[i];
                    est[i] = robustness(m, ctx.explainer(m, s.label), group, s.x, estimator_for(config, group, i));
                });
                add_rows(t.label, m.label(), metric_for(m), est);
                say(t.label + " " + m.label() + " " + metric_for(m) + " mean " +
                    detail::format_value(summarize([&] {
                        std::vector<double> v;
                        for (const auto& e : est) v.push_back(e.value);
                        return v;
                    }()).mean) +
                    " (" + elapsed(t0) + ")");
            }
        }

        if (stages.sensitivity) {
            for (const auto& m : config.sensitivity_methods) {
                const auto context = t.label + ", sensitivity of " + m.label();
                try {
                    ctx.prepare(m);
                } catch (const std::exception&) {
                    std::throw_with_nested(Error(context));
                }
                std::vector<double> sens(n_test), robust(n_test);
                std::vector<bool> have(n_test, false);
                for (const auto& r : out.rows) {
                    if (r.model == t.label && r.method == m.label() && r.metric == metric_for(m)) {
                        robust[r.example_id] = r.value;
                        have[r.example_id] = true;
                    }
                }
                for_examples(n_test, context, [&](std::size_t i) {
                    const auto& s = data.test[i];
                    const auto e = ctx.explainer(m, s.label);
                    sens[i] = sensitivity_max(e, s.x, config.sensitivity_epsilon, config.sensitivity_perturbations,
                                              config.seed * 1000003ULL + i);
                    if (!have[i]) robust[i] = robustness(m, e, group, s.x, estimator_for(config, group, i)).value;
                });
                for (std::size_t i = 0; i < n_test; ++i) {
                    out.rows.push_back({dataset, t.label, m.label(), "sensitivity", "sampled",
                                        config.sensitivity_perturbations, i, sens[i], config.seed});
                }
                CorrelationResult c{dataset, t.label, m.label(), n_test, std::nullopt};
                const auto sa = summarize(sens), sb = summarize(robust);
                if (n_test >= 3 && sa.stddev > 1e-12 && sb.stddev > 1e-12) c.r = correlate(sens, robust);
                say(t.label + " " + m.label() + " sensitivity/" + metric_for(m) + " pearson r " +
                    (c.r ? detail::format_value(*c.r) : std::string("undefined (constant series)")));
                out.correlations.push_back(c);
            }
        }

        if (stages.sweep) {
            const auto order = group.order();
            for (const auto& m : config.enforce_methods) {
                const auto context = t.label + ", enforced " + m.label();
                try {
                    ctx.prepare(m);
                } catch (const std::exception&) {
                    std::throw_with_nested(Error(context));
                }
                const bool concept_method = m.family == MethodFamily::concept_based;
                const auto sim = concept_method ? SimilarityKind::accuracy : SimilarityKind::cosine;
                // Enforced explainers only query the orbit of x, so one cache per
                // example serves every n_inv.
                std::vector<Explainer> base(n_test);
                for (std::size_t i = 0; i < n_test; ++i) {
                    base[i] = memoised(ctx.explainer(m, data.test[i].label, concept_method));
                }
                for (auto n_inv : config.enforce_n_inv) {
                    if (order && n_inv > *order) {
                        say("skipping n_inv " + std::to_string(n_inv) + " above the group order");
                        continue;
                    }
                    std::vector<double> vals(n_test);
                    std::string mode;
                    for_examples(n_test, context + " n_inv " + std::to_string(n_inv), [&](std::size_t i) {
                        const auto& s = data.test[i];
                        const auto enforced = enforce(base[i], group, n_inv, config.enforce_seed);
                        Explainer e = [&](const Signal& x) {
                            return concept_method ? threshold_concepts(enforced(x)) : enforced(x);
                        };
                        vals[i] = invariance_score(e, group, s.x, sim, estimator_for(config, group, i)).value;
                        if (i == 0) {
                            mode = enforced.mode() == EnforceMode::full_group ? "full_group"
                                                                               : "sampled_without_replacement";
                        }
                    });
                    out.sweep.push_back({dataset, t.label, m.label(), n_inv, mode, summarize(vals)});
                    say(t.label + " enforced " + m.label() + " n_inv " + std::to_string(n_inv) + " mean inv " +
                        detail::format_value(out.sweep.back().invariance.mean));
                }
            }
        }
    }

    out.verdicts = judge(out.rows, config.tolerance);
    if (config.assert_guarantees) {
        for (const auto& v : out.verdicts) {
            if (v.violated) {
                out.failures.push_back("guarantee violated: " + v.model + " " + v.method + " " + v.metric +
                                       " mean " + detail::format_value(v.observed.mean));
            }
        }
    }
    if (config.assert_sweep) {
        for (std::size_t i = 0; i < out.sweep.size(); ++i) {
            const auto& p = out.sweep[i];
            const bool continues = i > 0 && out.sweep[i - 1].model == p.model && out.sweep[i - 1].method == p.method;
            if (continues && p.invariance.mean < out.sweep[i - 1].invariance.mean - 1e-12) {
                out.failures.push_back("enforcement sweep decreases: " + p.model + " " + p.method + " at n_inv " +
                                       std::to_string(p.n_inv));
            }
            if (p.enforce_mode == "full_group" && p.invariance.mean < 1.0 - 1e-9) {
                out.failures.push_back("full-group enforcement is not invariant: " + p.model + " " + p.method);
            }
        }
    }

    // Single writer: every file is produced here, after the parallel work.
    const auto& dir = config.output_dir;
    std::filesystem::create_directories(dir);
    write_report_csv(dir / "report.csv", out.rows);
    const auto groups = detail::group_rows(out.rows, true);
    detail::write_boxplot_csv(dir / "boxplot.csv", groups);
    detail::write_scatter_csv(dir / "scatter.csv", out.rows);
    detail::write_verdict_csv(dir / "verdict.csv", out.verdicts);
    if (stages.sweep) detail::write_sweep_csv(dir / "sweep.csv", out.sweep, config.seed);
    if (stages.sensitivity) detail::write_sensitivity_csv(dir / "sensitivity.csv", out.correlations);
    if (config.svg) {
        if (!groups.empty()) detail::write_boxplot_svg(dir / "boxplot.svg", groups);
        if (!out.sweep.empty()) detail::write_sweep_svg(dir / "sweep.svg", out.sweep);
        if (config.model_invariance && !groups.empty()) detail::write_scatter_svg(dir / "scatter.svg", out.rows);
    }
    {
        std::ofstream f(dir / "summary.txt", std::ios::binary);
        f << detail::verdict_table(out.verdicts);
        for (const auto& c : out.correlations) {
            f << "pearson r (sensitivity, robustness) " << c.model << " " << c.method << ": "
              << (c.r ? detail::format_value(*c.r) : std::string("undefined")) << '\n';
        }
        for (const auto& msg : out.failures) f << "FAILED: " << msg << '\n';
    }
    return out;
}

} // namespace eqxai
