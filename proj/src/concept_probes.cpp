#include "eqxai/concept_probes.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "eqxai/errors.hpp"

namespace eqxai {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

void check_training_data(const std::vector<std::vector<double>>& reps, const std::vector<int>& labels) {
    if (reps.size() != labels.size()) throw InvalidArgumentError("concept data: reps and labels differ in length");
    if (reps.empty() || reps[0].empty()) throw InvalidArgumentError("concept data is empty");
    std::size_t pos = 0;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        if (reps[i].size() != reps[0].size()) throw ShapeMismatchError("concept data: representation sizes differ");
        if (labels[i] != 0 && labels[i] != 1) throw InvalidArgumentError("concept labels must be 0 or 1");
        pos += static_cast<std::size_t>(labels[i]);
    }
    if (pos < 2 || reps.size() - pos < 2) {
        throw InvalidArgumentError("concept data needs at least two examples of each class");
    }
    const bool identical = std::all_of(reps.begin(), reps.end(), [&](const auto& r) { return r == reps[0]; });
    if (identical) throw InvalidArgumentError("concept data is degenerate: all representations are identical");
}

Matrix matrix(std::size_t rows, std::size_t cols, std::vector<double> data) { return Matrix{rows, cols, std::move(data)}; }

// Soft-margin SVM dual by SMO with second-order working-set selection.
struct SvmSolution {
    std::vector<double> alpha;
    double rho = 0.0;
};

SvmSolution smo(const std::vector<double>& K, const std::vector<double>& y, double C, double eps,
                std::size_t max_iterations) {
    const std::size_t n = y.size();
    constexpr double tau = 1e-12;
    std::vector<double> alpha(n, 0.0), G(n, -1.0);
    auto Kij = [&](std::size_t i, std::size_t j) { return K[i * n + j]; };
    auto in_up = [&](std::size_t t) { return (y[t] > 0 && alpha[t] < C) || (y[t] < 0 && alpha[t] > 0); };
    auto in_low = [&](std::size_t t) { return (y[t] > 0 && alpha[t] > 0) || (y[t] < 0 && alpha[t] < C); };

    std::size_t iter = 0;
    for (;; ++iter) {
        if (iter >= max_iterations) throw ConvergenceError("SMO did not converge within the iteration cap");
        double gmax = -std::numeric_limits<double>::infinity();
        std::size_t i = n;
        for (std::size_t t = 0; t < n; ++t) {
            if (in_up(t) && -y[t] * G[t] > gmax) {
                gmax = -y[t] * G[t];
                i = t;
            }
        }
        double gmax2 = -std::numeric_limits<double>::infinity();
        double best = std::numeric_limits<double>::infinity();
        std::size_t j = n;
        for (std::size_t t = 0; t < n; ++t) {
            if (!in_low(t)) continue;
            gmax2 = std::max(gmax2, y[t] * G[t]);
            const double b = gmax + y[t] * G[t];
            if (i < n && b > 0) {
                double a = Kij(i, i) + Kij(t, t) - 2.0 * Kij(i, t);
                if (a <= 0) a = tau;
                if (-(b * b) / a < best) {
                    best = -(b * b) / a;
                    j = t;
                }
            }
        }
        if (i == n || j == n || gmax + gmax2 < eps) break;

        const double ai = alpha[i], aj = alpha[j];
        const double Qij = y[i] * y[j] * Kij(i, j);
        if (y[i] != y[j]) {
            double quad = Kij(i, i) + Kij(j, j) + 2.0 * Qij;
            if (quad <= 0) quad = tau;
            const double delta = (-G[i] - G[j]) / quad;
            const double diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0) {
                if (alpha[j] < 0) {
                    alpha[j] = 0;
                    alpha[i] = diff;
                }
            } else if (alpha[i] < 0) {
                alpha[i] = 0;
                alpha[j] = -diff;
            }
            if (diff > 0) {
                if (alpha[i] > C) {
                    alpha[i] = C;
                    alpha[j] = C - diff;
                }
            } else if (alpha[j] > C) {
                alpha[j] = C;
                alpha[i] = C + diff;
            }
        } else {
            double quad = Kij(i, i) + Kij(j, j) - 2.0 * Qij;
            if (quad <= 0) quad = tau;
            const double delta = (G[i] - G[j]) / quad;
            const double sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if (sum > C) {
                if (alpha[i] > C) {
                    alpha[i] = C;
                    alpha[j] = sum - C;
                }
                if (alpha[j] > C) {
                    alpha[j] = C;
                    alpha[i] = sum - C;
                }
            } else {
                if (alpha[j] < 0) {
                    alpha[j] = 0;
                    alpha[i] = sum;
                }
                if (alpha[i] < 0) {
                    alpha[i] = 0;
                    alpha[j] = sum;
                }
            }
        }
        const double di = alpha[i] - ai, dj = alpha[j] - aj;
        for (std::size_t t = 0; t < n; ++t) {
            G[t] += y[t] * (y[i] * Kij(i, t) * di + y[j] * Kij(j, t) * dj);
        }
    }

    // rho: mean of y G over free vectors, else the middle of the feasible range.
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum = 0.0;
    std::size_t free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = y[t] * G[t];
        const bool at_upper = alpha[t] >= C;
        if (at_upper || alpha[t] <= 0) {
            if ((y[t] > 0) != at_upper) {
                ub = std::min(ub, yg);
            } else {
                lb = std::max(lb, yg);
            }
        } else {
            ++free;
            sum += yg;
        }
    }
    SvmSolution out;
    out.rho = free > 0 ? sum / static_cast<double>(free) : 0.5 * (ub + lb);
    out.alpha = std::move(alpha);
    return out;
}

} // namespace

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m;
    m.rows = rows.size();
    m.cols = rows.empty() ? 0 : rows[0].size();
    m.data.reserve(m.rows * m.cols);
    for (const auto& r : rows) {
        if (r.size() != m.cols) throw ShapeMismatchError("matrix rows differ in length");
        m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
}

std::string to_string(ConceptKind kind) { return kind == ConceptKind::cav ? "cav" : "car"; }

ConceptKind parse_concept_kind(std::string_view name) {
    if (name == "cav") return ConceptKind::cav;
    if (name == "car") return ConceptKind::car;
    throw InvalidArgumentError("unknown concept classifier '" + std::string(name) + "'");
}

std::vector<double> ConceptClassifier::project(std::span<const double> rep) const {
    if (rep.size() != input_dim) throw ShapeMismatchError("concept classifier: representation size mismatch");
    std::vector<double> centred(rep.begin(), rep.end());
    for (std::size_t j = 0; j < input_dim; ++j) centred[j] -= pca_mean[j];
    std::vector<double> z(components.rows);
    for (std::size_t k = 0; k < components.rows; ++k) z[k] = dot(components.row(k), centred);
    return z;
}

double ConceptClassifier::decision(std::span<const double> rep) const {
    if (rep.size() != input_dim) throw ShapeMismatchError("concept classifier: representation size mismatch");
    if (kind == ConceptKind::cav) return dot(weights, rep) + bias;
    const auto z = project(rep);
    double s = bias;
    for (std::size_t i = 0; i < support_vectors.rows; ++i) {
        s += coef[i] * std::exp(-gamma * sq_dist(support_vectors.row(i), z));
    }
    return s;
}

double concept_accuracy(const ConceptClassifier& c, const std::vector<std::vector<double>>& reps,
                        const std::vector<int>& labels) {
    if (reps.size() != labels.size() || reps.empty()) throw InvalidArgumentError("concept accuracy: bad data");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < reps.size(); ++i) hit += static_cast<int>(c.predict(reps[i])) == labels[i];
    return static_cast<double>(hit) / static_cast<double>(reps.size());
}

ConceptClassifier fit_cav(const std::vector<std::vector<double>>& reps, const std::vector<int>& labels,
                          const CavConfig& config) {
    check_training_data(reps, labels);
    if (!(config.lr > 0.0) || config.epochs == 0) throw InvalidArgumentError("CAV needs lr > 0 and epochs > 0");
    const std::size_t n = reps.size();
    const std::size_t d = reps[0].size();
    ConceptClassifier c;
    c.kind = ConceptKind::cav;
    c.input_dim = d;
    c.weights.assign(d, 0.0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(config.seed);
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    for (std::size_t epoch = 0; epoch < config.epochs && stale < 5; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss = 0.0;
        for (std::size_t i : order) {
            const double a = dot(c.weights, reps[i]) + c.bias;
            const double y = labels[i];
            // log(1 + e^a) - y a, evaluated stably
            loss += std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))) - y * a;
            const double g = 1.0 / (1.0 + std::exp(-a)) - y;
            for (std::size_t j = 0; j < d; ++j) c.weights[j] -= config.lr * g * reps[i][j];
            c.bias -= config.lr * g;
        }
        loss /= static_cast<double>(n);
        if (loss > best - config.tol) {
            ++stale;
        } else {
            stale = 0;
        }
        best = std::min(best, loss);
    }
    c.train_accuracy = concept_accuracy(c, reps, labels);
    return c;
}

ConceptClassifier fit_car(const std::vector<std::vector<double>>& reps, const std::vector<int>& labels,
                          const CarConfig& config) {
    check_training_data(reps, labels);
    if (config.pca_components == 0 || !(config.c_reg > 0.0)) {
        throw InvalidArgumentError("CAR needs pca_components >= 1 and c_reg > 0");
    }
    const std::size_t n = reps.size();
    const std::size_t d = reps[0].size();
    const std::size_t k = std::min(config.pca_components, d);

    Eigen::MatrixXd X(static_cast<long>(n), static_cast<long>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) X(static_cast<long>(i), static_cast<long>(j)) = reps[i][j];
    }
    const Eigen::RowVectorXd mean = X.colwise().mean();
    const Eigen::MatrixXd Xc = X.rowwise() - mean;
    const Eigen::MatrixXd cov = Xc.transpose() * Xc / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    // Eigenvalues come in increasing order; keep the top k with a fixed sign.
    Eigen::MatrixXd P(static_cast<long>(k), static_cast<long>(d));
    for (std::size_t r = 0; r < k; ++r) {
        Eigen::VectorXd v = eig.eigenvectors().col(static_cast<long>(d - 1 - r));
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        P.row(static_cast<long>(r)) = v.transpose();
    }

    ConceptClassifier c;
    c.kind = ConceptKind::car;
    c.input_dim = d;
    c.pca_mean.assign(mean.data(), mean.data() + d);
    c.components = matrix(k, d, {});
    for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t j = 0; j < d; ++j) c.components.data.push_back(P(static_cast<long>(r), static_cast<long>(j)));
    }
    std::vector<std::vector<double>> Z(n);
    for (std::size_t i = 0; i < n; ++i) Z[i] = c.project(reps[i]);

    if (config.rbf_gamma) {
        if (!(*config.rbf_gamma > 0.0)) throw InvalidArgumentError("RBF gamma must be positive");
        c.gamma = *config.rbf_gamma;
    } else {
        double s = 0.0, ss = 0.0;
        for (const auto& z : Z) {
            for (double v : z) {
                s += v;
                ss += v * v;
            }
        }
        const double m = static_cast<double>(n * k);
        const double var = ss / m - (s / m) * (s / m);
        c.gamma = var > 0.0 ? 1.0 / (static_cast<double>(k) * var) : 1.0;
    }

    std::vector<double> K(n * n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = labels[i] ? 1.0 : -1.0;
        for (std::size_t j = 0; j <= i; ++j) K[i * n + j] = K[j * n + i] = std::exp(-c.gamma * sq_dist(Z[i], Z[j]));
    }
    const auto sol = smo(K, y, config.c_reg, config.tolerance, config.max_iterations);

    c.support_vectors = matrix(0, k, {});
    for (std::size_t i = 0; i < n; ++i) {
        if (sol.alpha[i] > 0.0) {
            c.support_vectors.data.insert(c.support_vectors.data.end(), Z[i].begin(), Z[i].end());
            ++c.support_vectors.rows;
            c.coef.push_back(sol.alpha[i] * y[i]);
        }
    }
    c.bias = -sol.rho;
    c.train_accuracy = concept_accuracy(c, reps, labels);
    return c;
}

std::vector<int> predict_concepts(std::span<const ConceptClassifier> classifiers, std::span<const double> rep) {
    std::vector<int> out;
    out.reserve(classifiers.size());
    for (const auto& c : classifiers) out.push_back(c.predict(rep) ? 1 : 0);
    return out;
}

Container to_container(const ConceptClassifier& c) {
    using autodiff::Tensor;
    Container out;
    out.kind = "concept_classifier";
    out.meta["concept_kind"] = to_string(c.kind);
    out.meta["name"] = c.name;
    out.meta["input_dim"] = std::to_string(c.input_dim);
    out.tensors.push_back({"bias", Tensor::scalar(c.bias)});
    out.tensors.push_back({"train_accuracy", Tensor::scalar(c.train_accuracy)});
    if (c.kind == ConceptKind::cav) {
        out.tensors.push_back({"weights", Tensor({c.weights.size()}, c.weights)});
    } else {
        out.tensors.push_back({"pca.mean", Tensor({c.pca_mean.size()}, c.pca_mean)});
        out.tensors.push_back({"pca.components", Tensor({c.components.rows, c.components.cols}, c.components.data)});
        out.tensors.push_back({"svm.vectors", Tensor({c.support_vectors.rows, c.support_vectors.cols},
                                                     c.support_vectors.data)});
        out.tensors.push_back({"svm.coef", Tensor({c.coef.size()}, c.coef)});
        out.tensors.push_back({"svm.gamma", Tensor::scalar(c.gamma)});
    }
    return out;
}

ConceptClassifier concept_from_container(const Container& in) {
    if (in.kind != "concept_classifier") throw FormatError("container does not hold a concept classifier");
    ConceptClassifier c;
    try {
        c.kind = parse_concept_kind(in.meta_value("concept_kind"));
        c.input_dim = std::stoul(in.meta_value("input_dim"));
    } catch (const InvalidArgumentError& e) {
        throw FormatError(e.what());
    } catch (const std::logic_error&) {
        throw FormatError("concept classifier: bad input_dim");
    }
    c.name = in.meta_value("name");
    c.bias = in.tensor("bias").item();
    c.train_accuracy = in.tensor("train_accuracy").item();
    if (c.kind == ConceptKind::cav) {
        c.weights = in.tensor("weights").values;
        if (c.weights.size() != c.input_dim) throw FormatError("concept classifier: weight size mismatch");
        return c;
    }
    c.pca_mean = in.tensor("pca.mean").values;
    auto as_matrix = [&](const char* name) {
        const auto& t = in.tensor(name);
        if (t.rank() != 2) throw FormatError(std::string("concept classifier: ") + name + " is not a matrix");
        return matrix(t.dims[0], t.dims[1], t.values);
    };
    c.components = as_matrix("pca.components");
    c.support_vectors = as_matrix("svm.vectors");
    c.coef = in.tensor("svm.coef").values;
    c.gamma = in.tensor("svm.gamma").item();
    if (c.pca_mean.size() != c.input_dim || c.components.cols != c.input_dim ||
        c.support_vectors.cols != c.components.rows || c.coef.size() != c.support_vectors.rows) {
        throw FormatError("concept classifier: inconsistent tensor sizes");
    }
    return c;
}

void save_concept(const std::filesystem::path& path, const ConceptClassifier& c) {
    save_container(path, to_container(c));
}

ConceptClassifier load_concept(const std::filesystem::path& path) {
    return concept_from_container(load_container(path));
}

} // namespace eqxai
