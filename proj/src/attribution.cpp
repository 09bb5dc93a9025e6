#include "eqxai/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "eqxai/errors.hpp"

namespace eqxai {

namespace {

void check_same_shape(const Signal& a, const Signal& b, const char* what) {
    if (!(a.shape == b.shape) || a.values.size() != b.values.size()) {
        throw ShapeMismatchError(std::string(what) + " shape does not match the input");
    }
}

double logit(const Predictor& f, const Signal& x, std::size_t target) { return f.forward(x).at(target); }

Signal with_values(const Signal& like, std::vector<double> values) {
    return Signal(like.shape, std::move(values), like.adjacency);
}

double stdev_of(const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double a : v) ss += (a - mean) * (a - mean);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

// Row-major offsets of the points covered by a window centred on `point`.
std::vector<std::size_t> window_points(const DomainShape& shape, std::size_t point, std::size_t window) {
    const auto& axes = shape.axes;
    std::vector<std::size_t> coord(axes.size());
    std::size_t rest = point;
    for (std::size_t a = axes.size(); a-- > 0;) {
        coord[a] = rest % axes[a];
        rest /= axes[a];
    }
    const auto lo = static_cast<long>((window - 1) / 2);
    std::vector<std::size_t> out{0};
    for (std::size_t a = 0; a < axes.size(); ++a) {
        const auto n = static_cast<long>(axes[a]);
        std::vector<std::size_t> next;
        next.reserve(out.size() * window);
        for (std::size_t base : out) {
            for (long d = -lo; d < static_cast<long>(window) - lo; ++d) {
                const long c = ((static_cast<long>(coord[a]) + d) % n + n) % n;
                next.push_back(base * axes[a] + static_cast<std::size_t>(c));
            }
        }
        out = std::move(next);
    }
    return out;
}

} // namespace

std::string to_string(BaselineMode mode) {
    switch (mode) {
        case BaselineMode::zero: return "zero";
        case BaselineMode::constant: return "constant";
        case BaselineMode::random_normal: return "random_normal";
        case BaselineMode::batch_shuffle: return "batch_shuffle";
    }
    return "?";
}

BaselineMode parse_baseline_mode(std::string_view name) {
    for (auto m : {BaselineMode::zero, BaselineMode::constant, BaselineMode::random_normal,
                   BaselineMode::batch_shuffle}) {
        if (name == to_string(m)) return m;
    }
    throw InvalidArgumentError("unknown baseline '" + std::string(name) + "'");
}

Signal make_baseline(const Baseline& baseline, const Signal& x, std::span<const Signal> reference) {
    std::vector<double> v(x.values.size(), 0.0);
    switch (baseline.mode) {
        case BaselineMode::zero: break;
        case BaselineMode::constant: std::fill(v.begin(), v.end(), baseline.value); break;
        case BaselineMode::random_normal: {
            if (baseline.stdev < 0.0) throw InvalidArgumentError("baseline stdev must be non-negative");
            std::mt19937_64 rng(baseline.seed);
            std::normal_distribution<double> n(0.0, 1.0);
            for (auto& a : v) a = baseline.stdev * n(rng);
            break;
        }
        case BaselineMode::batch_shuffle: {
            if (reference.empty()) throw InvalidArgumentError("batch_shuffle baseline needs a reference batch");
            for (const auto& r : reference) check_same_shape(x, r, "reference");
            std::mt19937_64 rng(baseline.seed);
            std::uniform_int_distribution<std::size_t> pick(0, reference.size() - 1);
            const std::size_t C = x.shape.channels;
            for (std::size_t p = 0; p < x.shape.points(); ++p) {
                const auto& src = reference[pick(rng)];
                std::copy_n(src.values.begin() + static_cast<long>(p * C), C, v.begin() + static_cast<long>(p * C));
            }
            break;
        }
    }
    return with_values(x, std::move(v));
}

std::size_t resolve_target(const Predictor& f, const Signal& x, std::optional<std::size_t> target) {
    if (target) {
        if (*target >= f.classes()) {
            throw InvalidArgumentError("target class " + std::to_string(*target) + " out of range");
        }
        return *target;
    }
    const auto y = f.forward(x);
    return static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
}

AttributionResult saliency(const Predictor& f, const Signal& x, std::optional<std::size_t> target) {
    const std::size_t t = resolve_target(f, x, target);
    return {with_values(x, f.input_gradient(x, t)), t, std::nullopt};
}

AttributionResult integrated_gradients(const Predictor& f, const Signal& x, const Signal& baseline,
                                       std::optional<std::size_t> target, std::size_t steps) {
    if (steps == 0) throw InvalidArgumentError("integrated gradients needs at least one step");
    check_same_shape(x, baseline, "baseline");
    const std::size_t t = resolve_target(f, x, target);
    const std::size_t n = x.values.size();
    std::vector<double> diff(n), sum(n, 0.0), point(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = x.values[i] - baseline.values[i];
    for (std::size_t s = 1; s <= steps; ++s) {
        const double alpha = static_cast<double>(s) / static_cast<double>(steps);
        for (std::size_t i = 0; i < n; ++i) point[i] = baseline.values[i] + alpha * diff[i];
        const auto g = f.input_gradient(with_values(x, point), t);
        for (std::size_t i = 0; i < n; ++i) sum[i] += g[i];
    }
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = diff[i] * sum[i] / static_cast<double>(steps);
    const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
    const double gap = std::abs(total - (logit(f, x, t) - logit(f, baseline, t)));
    return {with_values(x, std::move(scores)), t, gap};
}

AttributionResult input_x_gradient(const Predictor& f, const Signal& x, std::optional<std::size_t> target) {
    return integrated_gradients(f, x, make_baseline(Baseline{}, x), target, 1);
}

AttributionResult gradient_shap(const Predictor& f, const Signal& x, std::optional<std::size_t> target,
                                const GradientShapConfig& config) {
    if (config.baselines == 0 || config.points == 0) {
        throw InvalidArgumentError("gradient shap needs at least one sample");
    }
    const std::size_t t = resolve_target(f, x, target);
    const double sd = config.stdev ? *config.stdev : stdev_of(x.values);
    if (sd < 0.0) throw InvalidArgumentError("gradient shap stdev must be non-negative");
    const std::size_t n = x.values.size();
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> b(n), point(n), acc(n, 0.0);
    for (std::size_t j = 0; j < config.baselines; ++j) {
        for (auto& a : b) a = sd * normal(rng);
        for (std::size_t k = 0; k < config.points; ++k) {
            const double alpha = (static_cast<double>(k) + unit(rng)) / static_cast<double>(config.points);
            for (std::size_t i = 0; i < n; ++i) point[i] = b[i] + alpha * (x.values[i] - b[i]);
            const auto g = f.input_gradient(with_values(x, point), t);
            for (std::size_t i = 0; i < n; ++i) acc[i] += (x.values[i] - b[i]) * g[i];
        }
    }
    const double m = static_cast<double>(config.baselines * config.points);
    for (auto& a : acc) a /= m;
    return {with_values(x, std::move(acc)), t, std::nullopt};
}

AttributionResult perturbation_attribution(const Predictor& f, const Signal& x, std::optional<std::size_t> target,
                                           const PerturbationConfig& config) {
    const std::size_t t = resolve_target(f, x, target);
    Signal fill;
    switch (config.scheme) {
        case PerturbationScheme::ablation:
        case PerturbationScheme::occlusion:
            fill = make_baseline(config.baseline, x, config.reference);
            break;
        case PerturbationScheme::permutation:
            if (config.reference.empty()) {
                throw InvalidArgumentError("permutation attribution needs a reference batch");
            }
            fill = make_baseline(Baseline{BaselineMode::batch_shuffle, 0.0, 0.0, config.seed}, x, config.reference);
            break;
    }
    const auto& axes = x.shape.axes;
    if (config.scheme == PerturbationScheme::occlusion &&
        (config.window == 0 || std::any_of(axes.begin(), axes.end(), [&](std::size_t a) { return config.window > a; }))) {
        throw InvalidArgumentError("occlusion window must lie in [1, smallest axis extent]");
    }
    const std::size_t C = x.shape.channels;
    const std::size_t P = x.shape.points();
    const double fx = logit(f, x, t);
    std::vector<double> scores(x.values.size());
    std::vector<double> work = x.values;
    for (std::size_t p = 0; p < P; ++p) {
        const auto pts = config.scheme == PerturbationScheme::occlusion ? window_points(x.shape, p, config.window)
                                                                         : std::vector<std::size_t>{p};
        for (std::size_t q : pts) {
            for (std::size_t c = 0; c < C; ++c) work[q * C + c] = fill.values[q * C + c];
        }
        const double delta = fx - logit(f, with_values(x, work), t);
        for (std::size_t q : pts) {
            for (std::size_t c = 0; c < C; ++c) work[q * C + c] = x.values[q * C + c];
        }
        for (std::size_t c = 0; c < C; ++c) scores[p * C + c] = delta;
    }
    return {with_values(x, std::move(scores)), t, std::nullopt};
}

std::string to_string(FeatureMethod method) {
    switch (method) {
        case FeatureMethod::saliency: return "saliency";
        case FeatureMethod::integrated_gradients: return "integrated_gradients";
        case FeatureMethod::input_x_gradient: return "input_x_gradient";
        case FeatureMethod::gradient_shap: return "gradient_shap";
        case FeatureMethod::ablation: return "ablation";
        case FeatureMethod::permutation: return "permutation";
        case FeatureMethod::occlusion: return "occlusion";
    }
    return "?";
}

FeatureMethod parse_feature_method(std::string_view name) {
    for (auto m : {FeatureMethod::saliency, FeatureMethod::integrated_gradients, FeatureMethod::input_x_gradient,
                   FeatureMethod::gradient_shap, FeatureMethod::ablation, FeatureMethod::permutation,
                   FeatureMethod::occlusion}) {
        if (name == to_string(m)) return m;
    }
    throw InvalidArgumentError("unknown feature attribution method '" + std::string(name) + "'");
}

AttributionResult attribute(FeatureMethod method, const Predictor& f, const Signal& x,
                            std::optional<std::size_t> target, const FeatureMethodConfig& config) {
    switch (method) {
        case FeatureMethod::saliency: return saliency(f, x, target);
        case FeatureMethod::integrated_gradients:
            return integrated_gradients(f, x, make_baseline(config.baseline, x, config.reference), target,
                                        config.steps);
        case FeatureMethod::input_x_gradient: return input_x_gradient(f, x, target);
        case FeatureMethod::gradient_shap: return gradient_shap(f, x, target, config.shap);
        case FeatureMethod::ablation:
        case FeatureMethod::permutation:
        case FeatureMethod::occlusion: {
            PerturbationConfig pc;
            pc.scheme = method == FeatureMethod::ablation      ? PerturbationScheme::ablation
                        : method == FeatureMethod::permutation ? PerturbationScheme::permutation
                                                               : PerturbationScheme::occlusion;
            pc.baseline = config.baseline;
            pc.window = config.window;
            pc.reference = config.reference;
            pc.seed = config.baseline.seed;
            return perturbation_attribution(f, x, target, pc);
        }
    }
    throw InvalidArgumentError("unknown feature attribution method");
}

} // namespace eqxai
