#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eqxai/attribution.hpp"
#include "eqxai/data_synth.hpp"
#include "eqxai/errors.hpp"
#include "eqxai/example_importance.hpp"
#include "eqxai/robustness_metrics.hpp"

using namespace eqxai;

namespace {

class ConstantPredictor final : public Predictor {
public:
    std::size_t classes() const override { return 3; }
    std::vector<double> forward(const Signal&) const override { return {0.1, 0.1, 0.1}; }
    std::vector<double> input_gradient(const Signal& x, std::size_t) const override {
        return std::vector<double>(x.values.size(), 0.0);
    }
};

Explainer saliency_of(const Model& m) {
    return [&m](const Signal& x) { return Explanation::feature(saliency(ModelPredictor(m), x).scores); };
}

Signal ramp(std::size_t T) {
    std::vector<double> v(T);
    for (std::size_t i = 0; i < T; ++i) v[i] = static_cast<double>(i + 1);
    return Signal(DomainShape({T}, 1), v);
}

Dataset ecg(std::size_t n_test = 20) {
    DatasetSpec spec;
    spec.n_train = 64;
    spec.n_test = n_test;
    spec.seed = 6;
    return generate(spec);
}

} // namespace

TEST(Metrics, SimilarityExamples) {
    EXPECT_EQ(similarity(SimilarityKind::cosine, std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
    EXPECT_NEAR(similarity(SimilarityKind::cosine, std::vector<double>{1, -2, 3}, std::vector<double>{2, -4, 6}), 1.0,
                1e-15);
    EXPECT_EQ(similarity(SimilarityKind::accuracy, std::vector<double>{1, 0, 1, 0}, std::vector<double>{1, 0, 0, 0}),
              0.75);
    EXPECT_THROW(similarity(SimilarityKind::cosine, std::vector<double>{1}, std::vector<double>{1, 2}),
                 ShapeMismatchError);
}

TEST(Metrics, ZeroVectorConvention) {
    const std::vector<double> z = {0, 0, 0}, b = {1, 2, 3};
    EXPECT_EQ(similarity(SimilarityKind::cosine, z, z), 1.0);
    EXPECT_EQ(similarity(SimilarityKind::cosine, z, b), 0.0);
    EXPECT_EQ(similarity(SimilarityKind::cosine, b, z), 0.0);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (int i = 0; i < 100; ++i) {
        std::vector<double> v(7);
        for (auto& a : v) a = n(rng);
        const double s = similarity(SimilarityKind::cosine, v, v);
        EXPECT_NEAR(s, 1.0, 1e-15);
        EXPECT_LE(s, 1.0 + 1e-12);
    }
}

TEST(Metrics, InvarianceWiring) {
    const auto x = ramp(6);
    auto G = SymmetryGroup::cyclic(x.shape);
    Explainer constant = [](const Signal&) { return Explanation::vector(ExplanationKind::example_importance, {3, -1}); };
    EXPECT_DOUBLE_EQ(invariance_score(constant, G, x).value, 1.0);
    Explainer identity = [](const Signal& s) { return Explanation::feature(s); };
    auto I = SymmetryGroup::identity_only(x.shape);
    EXPECT_EQ(invariance_score(identity, I, x).value, 1.0);
    EXPECT_LT(invariance_score(identity, G, x).value, 1.0);
    // The identity explainer is equivariant by construction.
    EXPECT_NEAR(equivariance_score(identity, G, x).value, 1.0, 1e-15);
    EXPECT_EQ(invariance_score(identity, G, x).n_terms, 6u);
}

// cyclic(2), e = c = [1, 2]: (cos(c, c) + cos(c, [2, 1])) / 2 = (1 + 4/5) / 2.
TEST(Metrics, ConstantNonUniformExplanationIsNotEquivariant) {
    const Signal x(DomainShape({2}, 1), {5, 7});
    auto G = SymmetryGroup::cyclic(x.shape);
    Explainer c = [](const Signal& s) { return Explanation::feature(Signal(s.shape, {1.0, 2.0})); };
    EXPECT_NEAR(equivariance_score(c, G, x).value, 0.9, 1e-15);
}

TEST(Metrics, CategoricalEquivarianceIsRejected) {
    const auto x = ramp(4);
    auto G = SymmetryGroup::cyclic(x.shape);
    Explainer c = [](const Signal&) { return Explanation::vector(ExplanationKind::concept_presence, {1, 0}); };
    EXPECT_THROW(equivariance_score(c, G, x, OutputAction::trivial), InvalidArgumentError);
    EXPECT_EQ(invariance_score(c, G, x, SimilarityKind::accuracy).value, 1.0);
    EXPECT_THROW(equivariance_score([](const Signal&) { return Explanation::vector(ExplanationKind::example_importance, {1}); },
                                    G, x, OutputAction::same_as_input),
                 InvalidArgumentError);
}

TEST(Metrics, SaliencyEquivarianceOnInvariantCnn) {
    auto d = ecg(5);
    auto m = Model::build(ModelKind::all_cnn_1d, d.shape, d.classes, {}, 4);
    auto G = d.group();
    for (const auto& s : d.test) {
        const auto r = equivariance_score(saliency_of(m), G, s.x);
        EXPECT_NEAR(r.value, 1.0, 1e-7);
        EXPECT_EQ(r.mode, EstimatorMode::exact);
        EXPECT_EQ(r.n_terms, 32u);
        EXPECT_EQ(r.hoeffding_t, 0.0);
    }
}

TEST(Metrics, LossBasedInvarianceOnFullCyclicGroup) {
    auto d = ecg(3);
    auto m = Model::build(ModelKind::all_cnn_1d, d.shape, d.classes, {}, 4);
    TrainSubset sub;
    for (std::size_t i = 0; i < 10; ++i) {
        sub.xs.push_back(d.train[i].x);
        sub.ys.push_back(d.train[i].label);
    }
    InfluenceFunctions inf(m, sub);
    auto G = d.group();
    for (const auto& s : d.test) {
        Explainer e = [&](const Signal& x) {
            return Explanation::vector(ExplanationKind::example_importance, inf.scores(x, s.label).scores);
        };
        EXPECT_NEAR(invariance_score(e, G, s.x).value, 1.0, 1e-9);
    }
}

TEST(Metrics, ModelInvariance) {
    auto d = ecg(20);
    auto G = d.group();
    auto inv = Model::build(ModelKind::all_cnn_1d, d.shape, d.classes, {}, 1);
    auto flat = Model::build(ModelKind::flatten_cnn_1d, d.shape, d.classes, {}, 1);
    std::size_t below = 0;
    for (const auto& s : d.test) {
        EXPECT_NEAR(model_invariance_score(ModelPredictor(inv), G, s.x).value, 1.0, 1e-9);
        below += model_invariance_score(ModelPredictor(flat), G, s.x).value < 1.0 - 1e-12;
        EXPECT_EQ(model_invariance_score(ConstantPredictor(), G, s.x).value, 1.0);
    }
    EXPECT_GE(below, d.test.size() / 2);
}

TEST(Metrics, ExactModeRefusesHugeGroups) {
    const Signal x(DomainShape({32}, 1), std::vector<double>(32, 1.0));
    auto G = SymmetryGroup::symmetric(x.shape);
    Explainer id = [](const Signal& s) { return Explanation::feature(s); };
    EXPECT_THROW(invariance_score(id, G, x), OrderTooLargeError);
    const auto cfg = EstimatorConfig::automatic(G, 50, 3);
    EXPECT_EQ(cfg.mode, EstimatorMode::monte_carlo);
    const auto r = invariance_score(id, G, x, SimilarityKind::cosine, cfg);
    EXPECT_EQ(r.n_terms, 50u);
    EXPECT_EQ(r.seed, 3u);
    EXPECT_NEAR(r.hoeffding_t, std::sqrt(2.0 * std::log(2e4) / 50.0), 1e-15);
}

TEST(Metrics, HoeffdingExamples) {
    EXPECT_NEAR(hoeffding_bound(1000, 50, 0.02), 2.0 * std::exp(-10.0), 1e-12);
    EXPECT_LE(hoeffding_bound(1000, 50, 0.02), 1e-4);
    EXPECT_NEAR(hoeffding_bound(1000, 50, 0.02), 9.08e-5, 1e-7);
    EXPECT_EQ(hoeffding_bound(10, 10, 0.0), 2.0);
    EXPECT_NEAR(hoeffding_bound(1, 1, 2), 0.2707, 1e-4);
    EXPECT_NEAR(hoeffding_bound(1, 50, hoeffding_deviation(50)), 1e-4, 1e-12);
    EXPECT_THROW(hoeffding_bound(0, 1, 0.1), InvalidArgumentError);
}

// Averaged over 100 seeds, the Monte Carlo estimate matches the exact one.
TEST(Metrics, MonteCarloIsUnbiased) {
    auto d = ecg(2);
    auto G = d.group();
    auto flat = Model::build(ModelKind::flatten_cnn_1d, d.shape, d.classes, {}, 9);
    ModelPredictor f(flat);
    const auto& x = d.test[0].x;
    Explainer sal = saliency_of(flat);
    Explainer ixg = [&](const Signal& s) { return Explanation::feature(input_x_gradient(f, s).scores); };
    for (const auto& e : {sal, ixg}) {
        const double exact = equivariance_score(e, G, x).value;
        const double exact_inv = invariance_score(e, G, x).value;
        double mc = 0.0, mc_inv = 0.0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            EstimatorConfig cfg{EstimatorMode::monte_carlo, 50, seed};
            mc += equivariance_score(e, G, x, OutputAction::same_as_input, cfg).value / 100.0;
            mc_inv += invariance_score(e, G, x, SimilarityKind::cosine, cfg).value / 100.0;
        }
        EXPECT_LE(std::abs(mc - exact), 0.005);
        EXPECT_LE(std::abs(mc_inv - exact_inv), 0.005);
    }
    double mc = 0.0;
    const double exact = model_invariance_score(f, G, x).value;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        mc += model_invariance_score(f, G, x, EstimatorConfig{EstimatorMode::monte_carlo, 50, seed}).value / 100.0;
    }
    EXPECT_LE(std::abs(mc - exact), 0.005);
}

// Over 1000 seeded runs the frequency of an error above t stays below the
// Hoeffding bound.
TEST(Metrics, HoeffdingHoldsEmpirically) {
    const Signal x(DomainShape({8}, 1), {3, -1, 0, 2, 5, -4, 1, 0});
    auto G = SymmetryGroup::cyclic(x.shape);
    Explainer id = [](const Signal& s) { return Explanation::feature(s); };
    const double exact = invariance_score(id, G, x).value;
    const double t = 0.05;
    for (std::size_t n : {50u, 1500u}) {
        std::size_t exceed = 0;
        for (std::uint64_t seed = 0; seed < 1000; ++seed) {
            const auto r = invariance_score(id, G, x, SimilarityKind::cosine,
                                            EstimatorConfig{EstimatorMode::monte_carlo, n, seed});
            exceed += std::abs(r.value - exact) > t;
        }
        EXPECT_LE(static_cast<double>(exceed) / 1000.0, hoeffding_bound(1, static_cast<double>(n), t));
    }
}

TEST(Metrics, Sensitivity) {
    const auto x = ramp(8);
    Explainer constant = [](const Signal&) { return Explanation::vector(ExplanationKind::example_importance, {1, 2}); };
    EXPECT_EQ(sensitivity_max(constant, x), 0.0);
    Explainer linear_saliency = [](const Signal& s) {
        return Explanation::feature(Signal(s.shape, std::vector<double>(s.values.size(), 0.5)));
    };
    EXPECT_EQ(sensitivity_max(linear_saliency, x), 0.0);
    Explainer identity = [](const Signal& s) { return Explanation::feature(s); };
    EXPECT_LE(sensitivity_max(identity, x, 1e-9), 1e-9 * std::sqrt(8.0));
    EXPECT_GT(sensitivity_max(identity, x, 0.02), 0.0);
    EXPECT_THROW(sensitivity_max(identity, x, 0.0), InvalidArgumentError);
    auto m = Model::build(ModelKind::all_cnn_1d, DomainShape({16}, 1), 2, {}, 1);
    const auto xm = ramp(16);
    EXPECT_LT(sensitivity_max(saliency_of(m), xm, 1e-7), 1e-4);
}

TEST(Metrics, Correlation) {
    const std::vector<double> a = {1, 2, 3, 4, 5};
    const std::vector<double> neg = {10, 8, 6, 4, 2};
    EXPECT_NEAR(correlate(a, a), 1.0, 1e-15);
    EXPECT_NEAR(correlate(a, neg), -1.0, 1e-15);
    EXPECT_THROW(correlate(a, std::vector<double>(5, 1.0)), InvalidArgumentError);
    EXPECT_THROW(correlate(std::vector<double>{1, 2}, std::vector<double>{2, 1}), InvalidArgumentError);
}

TEST(Metrics, Summary) {
    const std::vector<double> v = {1, 2, 3, 4};
    const auto s = summarize(v);
    EXPECT_EQ(s.mean, 2.5);
    EXPECT_NEAR(s.stddev, std::sqrt(5.0 / 3.0), 1e-15);
    EXPECT_NEAR(s.ci_high - s.mean, 1.959963984540054 * s.stddev / 2.0, 1e-15);
    EXPECT_EQ(s.min, 1.0);
    EXPECT_EQ(s.max, 4.0);
}
