#include <gtest/gtest.h>

#include "eqxai/attribution.hpp"
#include "eqxai/concept_probes.hpp"
#include "eqxai/data_synth.hpp"
#include "eqxai/errors.hpp"
#include "eqxai/example_importance.hpp"
#include "eqxai/invariance_enforcer.hpp"

using namespace eqxai;

namespace {

Dataset ecg(std::size_t n_train, std::size_t n_test) {
    DatasetSpec spec;
    spec.n_train = n_train;
    spec.n_test = n_test;
    spec.seed = 8;
    return generate(spec);
}

} // namespace

TEST(Enforcer, FullGroupMakesAnyExplainerInvariant) {
    auto d = ecg(8, 10);
    auto m = Model::build(ModelKind::flatten_cnn_1d, d.shape, d.classes, {}, 2);
    ModelPredictor f(m);
    Explainer sal = [&](const Signal& x) { return Explanation::feature(saliency(f, x, 0).scores); };
    auto G = d.group();
    auto e_inv = enforce(sal, G, 32);
    EXPECT_EQ(e_inv.mode(), EnforceMode::full_group);
    for (const auto& s : d.test) {
        EXPECT_LT(invariance_score(sal, G, s.x).value, 1.0 - 1e-6);
        const auto ref = e_inv(s.x).values;
        double scale = 0.0;
        for (double v : ref) scale = std::max(scale, std::abs(v));
        for (const auto& g : G.enumerate()) {
            const auto moved = e_inv(G.act(g, s.x)).values;
            for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(moved[i], ref[i], 1e-9 * scale);
        }
        EXPECT_NEAR(invariance_score(Explainer(e_inv), G, s.x).value, 1.0, 1e-9);
    }
}

TEST(Enforcer, SingleIdentityElementIsTheBaseExplainer) {
    const Signal x(DomainShape({8}, 1), {1, 2, 3, 4, 5, 6, 7, 8});
    auto G = SymmetryGroup::cyclic(x.shape);
    Explainer id = [](const Signal& s) { return Explanation::feature(s); };
    bool found = false;
    for (std::uint64_t seed = 0; seed < 200 && !found; ++seed) {
        auto e = enforce(id, G, 1, seed);
        if (e.elements().front() == G.identity()) {
            EXPECT_EQ(e(x).values, x.values);
            found = true;
        }
    }
    EXPECT_TRUE(found);
}

TEST(Enforcer, AggregationIsLinear) {
    const Signal x(DomainShape({6}, 1), {0.5, -1, 2, 0, 3, 1});
    auto G = SymmetryGroup::cyclic(x.shape);
    Explainer e1 = [](const Signal& s) { return Explanation::feature(s); };
    Explainer e2 = [](const Signal& s) {
        Signal t = s;
        for (auto& v : t.values) v = v * v;
        return Explanation::feature(t);
    };
    const double alpha = -1.5;
    Explainer mix = [&](const Signal& s) {
        auto a = e1(s), b = e2(s);
        for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] = alpha * a.values[i] + b.values[i];
        return a;
    };
    auto lhs = enforce(mix, G, 4, 7)(x).values;
    auto a = enforce(e1, G, 4, 7)(x).values;
    auto b = enforce(e2, G, 4, 7)(x).values;
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], alpha * a[i] + b[i], 1e-12);
}

TEST(Enforcer, Errors) {
    const Signal x(DomainShape({4}, 1), {1, 2, 3, 4});
    auto G = SymmetryGroup::cyclic(x.shape);
    Explainer id = [](const Signal& s) { return Explanation::feature(s); };
    EXPECT_THROW(enforce(id, G, 5), InvalidArgumentError);
    EXPECT_THROW(enforce(id, G, 0), InvalidArgumentError);
    EXPECT_THROW(EnforcedExplainer(id, G, 3, 0, EnforceMode::full_group), InvalidArgumentError);
    Explainer bits = [](const Signal&) { return Explanation::vector(ExplanationKind::concept_presence, {1, 0}); };
    EXPECT_THROW(enforce(bits, G, 2)(x), InvalidArgumentError);
    EXPECT_THROW(threshold_concepts(Explanation::vector(ExplanationKind::example_importance, {1})),
                 InvalidArgumentError);
    EXPECT_EQ(threshold_concepts(Explanation::vector(ExplanationKind::concept_scores, {0.3, -0.1, 0.0})).values,
              (std::vector<double>{1, 0, 0}));
}

// Concept probe on a non-invariant representation: aggregating scores over
// more shifts raises the mean invariance, which reaches 1 on the whole group.
TEST(Enforcer, SweepOnConceptProbe) {
    auto d = ecg(200, 12);
    auto m = Model::build(ModelKind::all_cnn_1d, d.shape, d.classes, {}, 5);
    auto xs = inputs(d.train);
    const auto reps = representations(m, Tap::equiv, xs);
    std::vector<ConceptClassifier> cs;
    for (std::size_t c = 0; c < d.concept_names.size(); ++c) {
        std::vector<int> lab;
        for (const auto& s : d.train) lab.push_back(s.concepts[c]);
        cs.push_back(fit_cav(reps, lab));
    }
    Explainer scores = [&](const Signal& x) {
        const auto r = m.representation(Tap::equiv, x);
        std::vector<double> v;
        for (const auto& c : cs) v.push_back(c.decision(r));
        return Explanation::vector(ExplanationKind::concept_scores, v);
    };
    auto G = d.group();
    double previous = -1.0;
    for (std::size_t n_inv : {1u, 2u, 4u, 8u, 16u, 32u}) {
        auto e = enforce(scores, G, n_inv, 11);
        Explainer presence = [&](const Signal& x) { return threshold_concepts(e(x)); };
        double mean = 0.0;
        for (const auto& s : d.test) {
            mean += invariance_score(presence, G, s.x, SimilarityKind::accuracy).value / static_cast<double>(d.test.size());
        }
        EXPECT_GE(mean, previous - 1e-12) << n_inv;
        previous = mean;
        if (n_inv == 32) EXPECT_DOUBLE_EQ(mean, 1.0);
    }
}
