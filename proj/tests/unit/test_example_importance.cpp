#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <random>

#include "eqxai/data_synth.hpp"
#include "eqxai/errors.hpp"
#include "eqxai/example_importance.hpp"
#include "support/model_gradients.hpp"

using namespace eqxai;
using eqxai::testing::random_input;

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

TrainSubset subset_of(const std::vector<Sample>& samples, std::size_t n) {
    TrainSubset s;
    for (std::size_t i = 0; i < n; ++i) {
        s.xs.push_back(samples[i].x);
        s.ys.push_back(samples[i].label);
    }
    return s;
}

struct Trained {
    Dataset data;
    Model model;
    TrainResult run;
};

Trained trained(DatasetKind kind, ModelKind mk, std::size_t epochs) {
    DatasetSpec spec;
    spec.kind = kind;
    spec.n_train = 128;
    spec.n_test = 16;
    spec.seed = 3;
    auto d = generate(spec);
    auto m = Model::build(mk, d.shape, d.classes, {}, 1);
    TrainConfig tc;
    tc.epochs = epochs;
    tc.checkpoint_every = 2;
    tc.lr = 3e-3;
    auto xs = inputs(d.train);
    auto ys = labels(d.train);
    auto r = train(m, xs, ys, tc);
    return {std::move(d), std::move(m), std::move(r)};
}

// Output-layer parameters replaced by theta (flattened weight, then bias).
Model with_head(const Model& m, const std::vector<double>& theta) {
    auto params = m.parameters();
    auto& W = params[m.parameter_index("out.weight")].value.values;
    auto& b = params[m.parameter_index("out.bias")].value.values;
    std::copy(theta.begin(), theta.begin() + static_cast<long>(W.size()), W.begin());
    std::copy(theta.begin() + static_cast<long>(W.size()), theta.end(), b.begin());
    Model out = m;
    out.set_parameters(params);
    return out;
}

std::vector<double> head_of(const Model& m) {
    auto theta = m.parameter("out.weight").values;
    const auto& b = m.parameter("out.bias").values;
    theta.insert(theta.end(), b.begin(), b.end());
    return theta;
}

std::vector<double> mean_gradient(const Model& m, const TrainSubset& s) {
    std::vector<double> g;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto gi = last_layer_gradient(m, s.xs[i], s.ys[i]);
        if (g.empty()) g.assign(gi.size(), 0.0);
        for (std::size_t j = 0; j < gi.size(); ++j) g[j] += gi[j] / static_cast<double>(s.size());
    }
    return g;
}

// Dense Hessian of the mean training loss over the head, by central
// differences of the analytic gradient.
Eigen::MatrixXd fd_hessian(const Model& m, const TrainSubset& s) {
    const auto theta = head_of(m);
    const std::size_t P = theta.size();
    Eigen::MatrixXd H(P, P);
    const double h = 1e-5;
    for (std::size_t j = 0; j < P; ++j) {
        auto tp = theta, tm = theta;
        tp[j] += h;
        tm[j] -= h;
        const auto gp = mean_gradient(with_head(m, tp), s);
        const auto gm = mean_gradient(with_head(m, tm), s);
        for (std::size_t i = 0; i < P; ++i) H(static_cast<long>(i), static_cast<long>(j)) = (gp[i] - gm[i]) / (2 * h);
    }
    return 0.5 * (H + H.transpose());
}

} // namespace

TEST(ExampleImportance, LastLayerGradientMatchesAutodiff) {
    for (auto kind : {ModelKind::all_cnn_1d, ModelKind::deep_set}) {
        const DomainShape shape = kind == ModelKind::deep_set ? DomainShape({6}, 3) : DomainShape({16}, 1);
        auto m = Model::build(kind, shape, 3, {}, 2);
        std::mt19937_64 rng(4);
        const auto x = random_input(shape, false, rng);
        autodiff::Tape tape;
        std::vector<autodiff::Var> ps;
        for (const auto& p : m.parameters()) ps.push_back(tape.leaf(p.value, true));
        auto g = m.graph(tape, tape.constant(m.input_tensor(x)), x, ps);
        auto loss = autodiff::softmax_cross_entropy(g.logits, 2);
        const auto grads = tape.backward(loss, ps);
        auto expected = grads[m.parameter_index("out.weight")].values;
        const auto& gb = grads[m.parameter_index("out.bias")].values;
        expected.insert(expected.end(), gb.begin(), gb.end());
        const auto got = last_layer_gradient(m, x, 2);
        ASSERT_EQ(got.size(), expected.size());
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-12) << to_string(kind);
        EXPECT_EQ(penultimate(m, x), g.penultimate.value().values);
    }
}

TEST(ExampleImportance, HessianVectorProductMatchesFiniteDifferences) {
    for (auto kind : {ModelKind::all_cnn_1d, ModelKind::deep_set}) {
        auto t = trained(kind == ModelKind::deep_set ? DatasetKind::point_clouds : DatasetKind::ecg_like, kind, 2);
        auto sub = subset_of(t.data.train, 10);
        InfluenceFunctions inf(t.model, sub, 1e-2);
        const auto H = fd_hessian(t.model, sub);
        std::mt19937_64 rng(1);
        std::normal_distribution<double> n(0.0, 1.0);
        std::vector<double> v(inf.parameter_count());
        for (auto& a : v) a = n(rng);
        const auto hv = inf.damped_hvp(v);
        const Eigen::VectorXd ev = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<long>(v.size()));
        const Eigen::VectorXd ref = H * ev + 1e-2 * ev;
        for (std::size_t i = 0; i < v.size(); ++i) {
            EXPECT_NEAR(hv[i], ref(static_cast<long>(i)), 1e-6 * (1.0 + std::abs(ref(static_cast<long>(i)))));
        }
    }
}

// Oracle: dense solve on a 10-example, 2-class head.
TEST(ExampleImportance, InfluenceMatchesDenseSolve) {
    auto t = trained(DatasetKind::ecg_like, ModelKind::all_cnn_1d, 4);
    auto sub = subset_of(t.data.train, 10);
    const double lambda = 1e-2;
    const auto H = fd_hessian(t.model, sub);
    const Eigen::MatrixXd A = H + lambda * Eigen::MatrixXd::Identity(H.rows(), H.cols());
    InfluenceFunctions inf(t.model, sub, lambda);
    std::size_t self_top = 0;
    for (std::size_t k = 0; k < sub.size(); ++k) {
        const auto gx = last_layer_gradient(t.model, sub.xs[k], sub.ys[k]);
        const Eigen::VectorXd s =
            A.ldlt().solve(Eigen::Map<const Eigen::VectorXd>(gx.data(), static_cast<long>(gx.size())));
        const auto got = inf.scores(sub.xs[k], sub.ys[k]).scores;
        std::vector<double> ref(sub.size());
        for (std::size_t n = 0; n < sub.size(); ++n) {
            const auto& gn = inf.train_gradients()[n];
            ref[n] = Eigen::Map<const Eigen::VectorXd>(gn.data(), static_cast<long>(gn.size())).dot(s);
            EXPECT_NEAR(got[n], ref[n], 1e-5 * (1.0 + std::abs(ref[n])));
        }
        EXPECT_EQ(argmax(got), argmax(ref));
        self_top += argmax(got) == k;
    }
    // Points whose representation stands out are their own top example.
    EXPECT_GE(self_top, 1u);
}

TEST(ExampleImportance, LargeDampingApproachesGradientDotProducts) {
    auto t = trained(DatasetKind::ecg_like, ModelKind::all_cnn_1d, 2);
    auto sub = subset_of(t.data.train, 10);
    const double lambda = 1e5;
    const auto& x = t.data.test[0].x;
    const std::size_t y = t.data.test[0].label;
    const auto s = influence_functions(t.model, sub, x, y, lambda).scores;
    const auto gx = last_layer_gradient(t.model, x, y);
    for (std::size_t n = 0; n < sub.size(); ++n) {
        const auto gn = last_layer_gradient(t.model, sub.xs[n], sub.ys[n]);
        const double dot = std::inner_product(gn.begin(), gn.end(), gx.begin(), 0.0);
        EXPECT_NEAR(s[n] * lambda, dot, 0.01 * std::abs(dot) + 1e-12);
    }
}

TEST(ExampleImportance, LossBasedScoresAreInvariant) {
    auto t = trained(DatasetKind::ecg_like, ModelKind::all_cnn_1d, 4);
    auto sub = subset_of(t.data.train, 20);
    InfluenceFunctions inf(t.model, sub);
    TracIn tr(t.model, t.run.checkpoints, sub);
    auto G = t.data.group();
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& s = t.data.test[i];
        const auto a = inf.scores(s.x, s.label).scores;
        const auto b = tr.scores(s.x, s.label).scores;
        for (const auto& g : G.sample(i, 8, false)) {
            const auto gx = G.act(g, s.x);
            EXPECT_GE(cosine(inf.scores(gx, s.label).scores, a), 1.0 - 1e-9);
            EXPECT_GE(cosine(tr.scores(gx, s.label).scores, b), 1.0 - 1e-9);
        }
    }
}

// Single checkpoint, x = x_k where x_k has the largest gradient norm:
// Cauchy-Schwarz makes score_k = lr |g_k|^2 the maximum.
TEST(ExampleImportance, TracInSelfInfluence) {
    auto t = trained(DatasetKind::ecg_like, ModelKind::all_cnn_1d, 2);
    auto sub = subset_of(t.data.train, 12);
    std::vector<Checkpoint> one = {t.run.checkpoints.back()};
    one[0].optimizer_lr = 0.5;
    std::size_t k = 0;
    double best = -1.0;
    for (std::size_t n = 0; n < sub.size(); ++n) {
        const auto g = last_layer_gradient(t.model, sub.xs[n], sub.ys[n]);
        const double nn = std::inner_product(g.begin(), g.end(), g.begin(), 0.0);
        if (nn > best) {
            best = nn;
            k = n;
        }
    }
    const auto s = tracin(t.model, one, sub, sub.xs[k], sub.ys[k]).scores;
    EXPECT_NEAR(s[k], 0.5 * best, 1e-12 * best);
    EXPECT_EQ(argmax(s), k);
}

TEST(ExampleImportance, TracInZeroLearningRateAndMismatch) {
    auto t = trained(DatasetKind::ecg_like, ModelKind::all_cnn_1d, 2);
    auto sub = subset_of(t.data.train, 4);
    auto ckpts = t.run.checkpoints;
    for (auto& c : ckpts) c.optimizer_lr = 0.0;
    EXPECT_EQ(tracin(t.model, ckpts, sub, sub.xs[0], sub.ys[0]).scores, std::vector<double>(4, 0.0));
    auto other = Model::build(ModelKind::all_cnn_1d, t.data.shape, 2, {4, 4, 4, 4}, 0);
    std::vector<Checkpoint> wrong = {Checkpoint{0, 1e-3, other.parameters()}};
    EXPECT_THROW(TracIn(t.model, wrong, sub), InvalidArgumentError);
    EXPECT_THROW(TracIn(t.model, std::vector<Checkpoint>{}, sub), InvalidArgumentError);
}

TEST(ExampleImportance, InfluenceArgumentChecks) {
    auto m = Model::build(ModelKind::all_cnn_1d, DomainShape({16}, 1), 2, {}, 0);
    TrainSubset one;
    one.xs = {Signal::zeros(m.input_shape())};
    one.ys = {0};
    EXPECT_THROW(InfluenceFunctions(m, one), InvalidArgumentError);
    one.xs.push_back(Signal::zeros(m.input_shape()));
    one.ys.push_back(1);
    EXPECT_THROW(InfluenceFunctions(m, one, 0.0), InvalidArgumentError);
    EXPECT_THROW(InfluenceFunctions(m, one, 1e-2, 0).scores(one.xs[0], 1), ConvergenceError);
}

// Oracle for the simplex cases: the optimum is known in closed form because
// the target lies on a vertex or an edge of the hull.
TEST(ExampleImportance, SimplexRecoversVertexAndEdge) {
    const std::vector<std::vector<double>> rows = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}, {-1, -1, -1}};
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto r = simplex_weights(rows, rows[k]);
        EXPECT_GE(r.scores[k], 0.99) << k;
        EXPECT_NEAR(std::accumulate(r.scores.begin(), r.scores.end(), 0.0), 1.0, 1e-12);
        for (double w : r.scores) EXPECT_GE(w, 0.0);
    }
    const std::vector<double> mid = {0.5, 0.5, 0.0};
    const auto r = simplex_weights(rows, mid);
    EXPECT_NEAR(r.scores[0], 0.5, 0.05);
    EXPECT_NEAR(r.scores[1], 0.5, 0.05);
    EXPECT_LT(*r.residual, 1e-2);
}

TEST(ExampleImportance, SimplexDegenerateRows) {
    const std::vector<std::vector<double>> rows(4, {1.0, 2.0});
    const std::vector<double> x = {2.0, 0.0};
    const auto r = simplex_weights(rows, x);
    EXPECT_NEAR(*r.residual, std::sqrt(1.0 + 4.0), 1e-12);
    EXPECT_TRUE(r.converged);
    EXPECT_THROW(simplex_weights({{1.0}, {1.0, 2.0}}, x), ShapeMismatchError);
    EXPECT_THROW(simplex_weights({}, x), InvalidArgumentError);
}

TEST(ExampleImportance, RepresentationSimilarity) {
    const std::vector<std::vector<double>> rows = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    EXPECT_EQ(representation_similarity(rows, rows[1]).scores, (std::vector<double>{0, 1, 0}));
    EXPECT_EQ(representation_similarity(rows, std::vector<double>(3, 0.0)).scores, std::vector<double>(3, 0.0));
}

// Invariant tap: representation methods are invariant. Equivariant tap on a
// Deep Set: representation similarity moves under some permutation.
TEST(ExampleImportance, RepresentationBasedInvariance) {
    auto t = trained(DatasetKind::point_clouds, ModelKind::deep_set, 2);
    std::vector<Signal> train_x;
    for (std::size_t i = 0; i < 20; ++i) train_x.push_back(t.data.train[i].x);
    const auto inv_train = representations(t.model, Tap::inv, train_x);
    const auto eq_train = representations(t.model, Tap::equiv, train_x);
    auto G = t.data.group();
    bool violated = false;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& x = t.data.test[i].x;
        const auto inv = t.model.representation(Tap::inv, x);
        const auto sx = simplex_weights(inv_train, inv).scores;
        const auto rx = representation_similarity(inv_train, inv).scores;
        const auto ex = representation_similarity(eq_train, t.model.representation(Tap::equiv, x)).scores;
        for (const auto& g : G.sample(10 + i, 5, false)) {
            const auto gx = G.act(g, x);
            const auto ginv = t.model.representation(Tap::inv, gx);
            const auto sg = simplex_weights(inv_train, ginv).scores;
            EXPECT_GE(cosine(sg, sx), 0.999);
            EXPECT_EQ(argmax(sg), argmax(sx));
            EXPECT_GE(cosine(representation_similarity(inv_train, ginv).scores, rx), 1.0 - 1e-9);
            const auto eg = representation_similarity(eq_train, t.model.representation(Tap::equiv, gx)).scores;
            if (cosine(eg, ex) < 1.0 - 1e-6) violated = true;
        }
    }
    EXPECT_TRUE(violated);
}
