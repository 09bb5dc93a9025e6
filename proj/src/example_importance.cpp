#include "eqxai/example_importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "eqxai/errors.hpp"
#include "eqxai/parallel.hpp"

namespace eqxai {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Output layer evaluated at z: returns the gradient of the loss with respect
// to the pre-activation a = z W + b and, when asked, its K x K Hessian.
struct HeadDerivatives {
    std::vector<double> grad;
    std::vector<double> hess;
};

HeadDerivatives head_derivatives(const Model& model, std::span<const double> z, std::size_t y, bool hessian) {
    const auto& W = model.parameter("out.weight");
    const auto& b = model.parameter("out.bias");
    const std::size_t h = W.dims[0];
    const std::size_t K = W.dims[1];
    std::vector<double> a(b.values);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t k = 0; k < K; ++k) a[k] += z[i] * W.values[i * K + k];
    }
    const bool tanh_out = model.output_activation() == OutputActivation::tanh;
    std::vector<double> logits(a);
    if (tanh_out) {
        for (auto& v : logits) v = std::tanh(v);
    }
    const auto p = autodiff::softmax(logits);
    std::vector<double> e(K);  // dL/dlogits
    for (std::size_t k = 0; k < K; ++k) e[k] = p[k] - (k == y ? 1.0 : 0.0);
    std::vector<double> d(K, 1.0);  // dlogits/da
    if (tanh_out) {
        for (std::size_t k = 0; k < K; ++k) d[k] = 1.0 - logits[k] * logits[k];
    }
    HeadDerivatives out;
    out.grad.resize(K);
    for (std::size_t k = 0; k < K; ++k) out.grad[k] = e[k] * d[k];
    if (hessian) {
        out.hess.assign(K * K, 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t l = 0; l < K; ++l) {
                const double s = (k == l ? p[k] : 0.0) - p[k] * p[l];
                out.hess[k * K + l] = d[k] * s * d[l];
            }
            if (tanh_out) out.hess[k * K + k] += e[k] * (-2.0 * logits[k] * d[k]);
        }
    }
    return out;
}

std::vector<double> flatten_gradient(std::span<const double> z, std::span<const double> ga) {
    const std::size_t h = z.size();
    const std::size_t K = ga.size();
    std::vector<double> g(h * K + K);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t k = 0; k < K; ++k) g[i * K + k] = z[i] * ga[k];
    }
    std::copy(ga.begin(), ga.end(), g.begin() + static_cast<long>(h * K));
    return g;
}

} // namespace

void TrainSubset::validate(const Model& model) const {
    if (xs.size() != ys.size()) throw InvalidArgumentError("train subset inputs and labels differ in length");
    if (xs.size() < 2) throw InvalidArgumentError("train subset needs at least two examples");
    for (std::size_t i = 0; i < xs.size(); ++i) {
        model.check_input(xs[i]);
        if (ys[i] >= model.classes()) throw InvalidArgumentError("train subset label out of range");
    }
}

std::vector<double> penultimate(const Model& model, const Signal& x) {
    model.check_input(x);
    autodiff::Tape tape;
    auto in = tape.constant(model.input_tensor(x));
    return model.graph(tape, in, x).penultimate.value().values;
}

std::vector<std::vector<double>> representations(const Model& model, Tap tap, std::span<const Signal> xs) {
    std::vector<std::vector<double>> out(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) { out[i] = model.representation(tap, xs[i]); });
    return out;
}

std::vector<double> last_layer_gradient(const Model& model, const Signal& x, std::size_t y) {
    if (y >= model.classes()) throw InvalidArgumentError("label out of range");
    const auto z = penultimate(model, x);
    return flatten_gradient(z, head_derivatives(model, z, y, false).grad);
}

InfluenceFunctions::InfluenceFunctions(const Model& model, TrainSubset subset, double damping,
                                       std::size_t max_iterations, double tolerance)
    : model_(&model),
      subset_(std::move(subset)),
      damping_(damping),
      max_iterations_(max_iterations),
      tolerance_(tolerance) {
    if (!(damping > 0.0)) throw InvalidArgumentError("influence damping must be positive");
    subset_.validate(model);
    const auto& W = model.parameter("out.weight");
    hidden_ = W.dims[0];
    classes_ = W.dims[1];
    dim_ = hidden_ * classes_ + classes_;
    const std::size_t n = subset_.size();
    z_.resize(n);
    curv_.resize(n);
    grads_.resize(n);
    parallel_for(n, [&](std::size_t i) {
        z_[i] = penultimate(model, subset_.xs[i]);
        auto hd = head_derivatives(model, z_[i], subset_.ys[i], true);
        grads_[i] = flatten_gradient(z_[i], hd.grad);
        curv_[i] = std::move(hd.hess);
    });
}

std::vector<double> InfluenceFunctions::damped_hvp(std::span<const double> v) const {
    if (v.size() != dim_) throw ShapeMismatchError("Hessian-vector product: vector has the wrong length");
    const std::size_t h = hidden_;
    const std::size_t K = classes_;
    std::vector<double> out(dim_, 0.0);
    std::vector<double> u(K), w(K);
    for (std::size_t n = 0; n < z_.size(); ++n) {
        const auto& z = z_[n];
        for (std::size_t k = 0; k < K; ++k) {
            double s = v[h * K + k];
            for (std::size_t i = 0; i < h; ++i) s += z[i] * v[i * K + k];
            u[k] = s;
        }
        for (std::size_t k = 0; k < K; ++k) {
            double s = 0.0;
            for (std::size_t l = 0; l < K; ++l) s += curv_[n][k * K + l] * u[l];
            w[k] = s;
        }
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t k = 0; k < K; ++k) out[i * K + k] += z[i] * w[k];
        }
        for (std::size_t k = 0; k < K; ++k) out[h * K + k] += w[k];
    }
    const double inv_n = 1.0 / static_cast<double>(z_.size());
    for (std::size_t j = 0; j < dim_; ++j) out[j] = out[j] * inv_n + damping_ * v[j];
    return out;
}

ExampleScores InfluenceFunctions::scores(const Signal& x, std::size_t y) const {
    const auto g = last_layer_gradient(*model_, x, y);
    // Conjugate gradients on (H + damping I) s = g.
    std::vector<double> s(dim_, 0.0), r(g), p(g);
    const double g_norm = std::sqrt(dot(g, g));
    double rr = dot(r, r);
    bool done = g_norm == 0.0;
    for (std::size_t it = 0; !done && it < max_iterations_; ++it) {
        const auto Ap = damped_hvp(p);
        const double pAp = dot(p, Ap);
        if (!(pAp > 0.0)) throw ConvergenceError("influence functions: damped Hessian is not positive definite");
        const double alpha = rr / pAp;
        for (std::size_t j = 0; j < dim_; ++j) {
            s[j] += alpha * p[j];
            r[j] -= alpha * Ap[j];
        }
        const double rr_next = dot(r, r);
        if (std::sqrt(rr_next) <= tolerance_ * g_norm) {
            done = true;
            break;
        }
        for (std::size_t j = 0; j < dim_; ++j) p[j] = r[j] + (rr_next / rr) * p[j];
        rr = rr_next;
    }
    if (!done) throw ConvergenceError("influence functions: conjugate gradients did not converge");
    ExampleScores out;
    out.method = "influence_functions";
    out.scores.resize(grads_.size());
    for (std::size_t n = 0; n < grads_.size(); ++n) out.scores[n] = dot(grads_[n], s);
    return out;
}

ExampleScores influence_functions(const Model& model, const TrainSubset& subset, const Signal& x, std::size_t y,
                                  double damping) {
    return InfluenceFunctions(model, subset, damping).scores(x, y);
}

TracIn::TracIn(const Model& model, std::span<const Checkpoint> checkpoints, TrainSubset subset) {
    if (checkpoints.empty()) throw InvalidArgumentError("TracIn needs at least one checkpoint");
    subset.validate(model);
    for (const auto& c : checkpoints) {
        Model m = model;
        try {
            m.set_parameters(c.parameters);
        } catch (const Error& e) {
            throw InvalidArgumentError(std::string("checkpoint does not match the model: ") + e.what());
        }
        models_.push_back(std::move(m));
        lrs_.push_back(c.optimizer_lr);
    }
    grads_.resize(models_.size());
    for (std::size_t c = 0; c < models_.size(); ++c) {
        grads_[c].resize(subset.size());
        parallel_for(subset.size(), [&](std::size_t i) {
            grads_[c][i] = last_layer_gradient(models_[c], subset.xs[i], subset.ys[i]);
        });
    }
}

ExampleScores TracIn::scores(const Signal& x, std::size_t y) const {
    ExampleScores out;
    out.method = "tracin";
    out.scores.assign(grads_.front().size(), 0.0);
    for (std::size_t c = 0; c < models_.size(); ++c) {
        const auto g = last_layer_gradient(models_[c], x, y);
        for (std::size_t n = 0; n < out.scores.size(); ++n) out.scores[n] += lrs_[c] * dot(grads_[c][n], g);
    }
    return out;
}

ExampleScores tracin(const Model& model, std::span<const Checkpoint> checkpoints, const TrainSubset& subset,
                     const Signal& x, std::size_t y) {
    return TracIn(model, checkpoints, subset).scores(x, y);
}

ExampleScores simplex_weights(const std::vector<std::vector<double>>& rep_train, std::span<const double> rep_x,
                              const SimplexConfig& config) {
    const std::size_t n = rep_train.size();
    if (n == 0) throw InvalidArgumentError("SimplEx needs at least one training representation");
    const std::size_t d = rep_x.size();
    if (d == 0) throw InvalidArgumentError("SimplEx needs non-empty representations");
    for (const auto& r : rep_train) {
        if (r.size() != d) throw ShapeMismatchError("SimplEx: representation dimensions differ");
    }
    if (config.epochs == 0 || !(config.lr > 0.0)) throw InvalidArgumentError("SimplEx needs epochs and lr > 0");

    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Eigen::MatrixXd reps(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        reps.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rep_train[i].data(), d);
    }
    const Eigen::Map<const Eigen::VectorXd> target(rep_x.data(), static_cast<Eigen::Index>(d));
    // The gradient only needs rep_i . rep_x and the Gram matrix, so each step
    // costs O(n^2) whatever the representation width.
    const Eigen::VectorXd b = reps * target;
    const Eigen::MatrixXd gram = reps * reps.transpose();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n), m = u, v = u, w(n), gw(n);
    auto weights = [&] {
        w = (u.array() - u.maxCoeff()).exp();
        w /= w.sum();
    };
    auto residual = [&] { return (target - reps.transpose() * w).norm(); };

    const std::size_t tail_start = config.epochs - std::max<std::size_t>(1, config.epochs / 10);
    bool monotone = true;
    double last = 0.0;
    for (std::size_t t = 0; t < config.epochs; ++t) {
        weights();
        if (t >= tail_start) {
            const double r = residual();
            if (t > tail_start && r > last + 1e-9 * (1.0 + last)) monotone = false;
            last = r;
        }
        // d|resid|^2/dw_i = -2 rep_i . resid = -2 (b_i - (G w)_i), then through the softmax.
        gw.noalias() = gram * w;
        gw = 2.0 * (gw - b);
        const double wg = w.dot(gw);
        const double b1 = 1.0 - std::pow(beta1, static_cast<double>(t + 1));
        const double b2 = 1.0 - std::pow(beta2, static_cast<double>(t + 1));
        const Eigen::ArrayXd gu = w.array() * (gw.array() - wg);
        m = beta1 * m + (1.0 - beta1) * gu.matrix();
        v = beta2 * v + (1.0 - beta2) * gu.square().matrix();
        u.array() -= config.lr * (m.array() / b1) / ((v.array() / b2).sqrt() + eps);
    }
    weights();
    ExampleScores out;
    out.method = "simplex";
    out.residual = residual();
    out.converged = monotone && std::isfinite(*out.residual);
    out.scores.assign(w.data(), w.data() + w.size());
    return out;
}

ExampleScores representation_similarity(const std::vector<std::vector<double>>& rep_train,
                                        std::span<const double> rep_x) {
    ExampleScores out;
    out.method = "representation_similarity";
    out.scores.reserve(rep_train.size());
    for (const auto& r : rep_train) {
        if (r.size() != rep_x.size()) throw ShapeMismatchError("representation dimensions differ");
        out.scores.push_back(dot(r, rep_x));
    }
    return out;
}

} // namespace eqxai
