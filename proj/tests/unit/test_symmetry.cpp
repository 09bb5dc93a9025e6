#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "eqxai/errors.hpp"
#include "eqxai/symmetry.hpp"

using namespace eqxai;

namespace {

Signal ramp(const DomainShape& shape) {
    std::vector<double> v(shape.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i) + 1.0;
    return Signal(shape, v);
}

Signal random_signal(const DomainShape& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(shape.size());
    for (auto& x : v) x = n(rng);
    return Signal(shape, v);
}

std::vector<SymmetryGroup> small_groups() {
    return {
        SymmetryGroup::cyclic(DomainShape({6}, 2)),
        SymmetryGroup::cyclic2d(DomainShape({3, 4}, 1)),
        SymmetryGroup::dihedral4(DomainShape({3, 3}, 2)),
        SymmetryGroup::symmetric(DomainShape({4}, 3)),
    };
}

} // namespace

TEST(Symmetry, CyclicComposeIsModularAddition) {
    auto G = SymmetryGroup::cyclic(DomainShape({4}, 1));
    auto g1 = G.parse_element("shift:1");
    auto g2 = G.parse_element("shift:2");
    EXPECT_EQ(to_param_string(G.compose(g1, g2)), "shift:3");
    EXPECT_EQ(G.compose(G.parse_element("shift:3"), g1), G.identity());
}

TEST(Symmetry, SymmetricComposeByHand) {
    auto G = SymmetryGroup::symmetric(DomainShape({3}, 1));
    auto out = G.compose(G.parse_element("perm:1,2,0"), G.parse_element("perm:2,0,1"));
    EXPECT_EQ(to_param_string(out), "perm:0,1,2");
    EXPECT_EQ(out, G.identity());
}

TEST(Symmetry, Inverses) {
    auto C = SymmetryGroup::cyclic(DomainShape({8}, 1));
    EXPECT_EQ(to_param_string(C.inverse(C.parse_element("shift:3"))), "shift:5");
    auto D = SymmetryGroup::dihedral4(DomainShape({4, 4}, 1));
    EXPECT_EQ(to_param_string(D.inverse(D.parse_element("d4:1,0"))), "d4:3,0");
    auto S = SymmetryGroup::symmetric(DomainShape({4}, 1));
    EXPECT_EQ(to_param_string(S.inverse(S.parse_element("perm:1,2,3,0"))), "perm:3,0,1,2");
}

TEST(Symmetry, ComposeRejectsForeignElements) {
    auto A = SymmetryGroup::cyclic(DomainShape({4}, 1));
    auto B = SymmetryGroup::cyclic(DomainShape({5}, 1));
    EXPECT_THROW(A.compose(A.identity(), B.identity()), GroupMismatchError);
}

TEST(Symmetry, EnumerateOrders) {
    EXPECT_EQ(SymmetryGroup::cyclic(DomainShape({32}, 1)).enumerate().size(), 32u);
    auto D = SymmetryGroup::dihedral4(DomainShape({5, 5}, 1));
    auto all = D.enumerate();
    EXPECT_EQ(all.size(), 8u);
    EXPECT_EQ(all.front(), D.identity());
    std::set<std::string> distinct;
    for (const auto& g : all) distinct.insert(to_param_string(g));
    EXPECT_EQ(distinct.size(), 8u);
    auto S = SymmetryGroup::symmetric(DomainShape({32}, 1));
    EXPECT_FALSE(S.order().has_value());
    EXPECT_THROW(S.enumerate(), OrderTooLargeError);
    EXPECT_EQ(SymmetryGroup::symmetric(DomainShape({5}, 1)).enumerate().size(), 120u);
}

TEST(Symmetry, Sampling) {
    auto S = SymmetryGroup::symmetric(DomainShape({1000}, 1));
    auto draws = S.sample(7, 50, false);
    ASSERT_EQ(draws.size(), 50u);
    for (const auto& g : draws) EXPECT_TRUE(S.contains(g));
    EXPECT_EQ(draws, S.sample(7, 50, false));
    EXPECT_NE(draws, S.sample(8, 50, false));
    EXPECT_TRUE(S.sample(1, 0, false).empty());

    auto C = SymmetryGroup::cyclic(DomainShape({4}, 1));
    auto subset = C.sample(3, 4, true);
    std::set<std::string> seen;
    for (const auto& g : subset) seen.insert(to_param_string(g));
    EXPECT_EQ(seen, (std::set<std::string>{"shift:0", "shift:1", "shift:2", "shift:3"}));
    EXPECT_THROW(C.sample(3, 5, true), InvalidArgumentError);

    auto unique = S.sample(11, 30, true);
    std::set<std::string> u;
    for (const auto& g : unique) u.insert(to_param_string(g));
    EXPECT_EQ(u.size(), 30u);
}

TEST(Symmetry, SampleWithoutReplacementIsNested) {
    auto C = SymmetryGroup::cyclic(DomainShape({32}, 1));
    auto small = C.sample(5, 4, true);
    auto big = C.sample(5, 16, true);
    EXPECT_TRUE(std::equal(small.begin(), small.end(), big.begin()));
}

TEST(Symmetry, ActExamples) {
    auto C = SymmetryGroup::cyclic(DomainShape({4}, 1));
    Signal x(DomainShape({4}, 1), {1, 2, 3, 4});
    EXPECT_EQ(C.act(C.parse_element("shift:1"), x).values, (std::vector<double>{4, 1, 2, 3}));
    EXPECT_EQ(C.act(C.identity(), x).values, x.values);

    // [[a,b],[c,d]] rotated by a quarter turn is [[c,a],[d,b]].
    auto D = SymmetryGroup::dihedral4(DomainShape({2, 2}, 1));
    Signal img(DomainShape({2, 2}, 1), {1, 2, 3, 4});
    EXPECT_EQ(D.act(D.parse_element("d4:1,0"), img).values, (std::vector<double>{3, 1, 4, 2}));

    EXPECT_THROW(C.act(C.identity(), Signal(DomainShape({5}, 1), {1, 2, 3, 4, 5})),
                 ShapeMismatchError);
}

TEST(Symmetry, ChannelsMoveWithTheirPoint) {
    auto C = SymmetryGroup::cyclic(DomainShape({3}, 2));
    Signal x(DomainShape({3}, 2), {1, 10, 2, 20, 3, 30});
    EXPECT_EQ(C.act(C.parse_element("shift:1"), x).values, (std::vector<double>{3, 30, 1, 10, 2, 20}));
}

TEST(Symmetry, GraphAdjacencyPermutesJointly) {
    auto S = SymmetryGroup::symmetric(DomainShape({3}, 1));
    // path 0-1, node features mark node id
    Signal x(DomainShape({3}, 1), {0, 1, 2}, {0, 1, 0, 1, 0, 0, 0, 0, 0});
    auto g = S.parse_element("perm:2,0,1");
    auto y = S.act(g, x);
    // node i moves to position image[i]: 0->2, 1->0, 2->1
    EXPECT_EQ(y.values, (std::vector<double>{1, 2, 0}));
    // edge (0,1) becomes (2,0)
    EXPECT_EQ(y.adjacency, (std::vector<double>{0, 0, 1, 0, 0, 0, 1, 0, 0}));
}

TEST(Symmetry, ExplanationActions) {
    auto C = SymmetryGroup::cyclic(DomainShape({4}, 1));
    auto g = C.parse_element("shift:1");
    auto attr = Explanation::feature(Signal(DomainShape({4}, 1), {1, 2, 3, 4}));
    EXPECT_EQ(C.act_on_explanation(g, attr, OutputAction::same_as_input).values,
              (std::vector<double>{4, 1, 2, 3}));
    auto imp = Explanation::vector(ExplanationKind::example_importance, {0.3, 0.7});
    EXPECT_EQ(C.act_on_explanation(g, imp, OutputAction::trivial).values, imp.values);
    auto concept_vec = Explanation::vector(ExplanationKind::concept_presence, {1, 0, 1, 0});
    EXPECT_EQ(C.act_on_explanation(g, concept_vec, OutputAction::trivial).values, concept_vec.values);
    EXPECT_THROW(C.act_on_explanation(g, imp, OutputAction::same_as_input), InvalidArgumentError);
}

TEST(Symmetry, GroupAxiomsExhaustive) {
    for (const auto& G : small_groups()) {
        auto all = G.enumerate();
        const auto e = G.identity();
        for (const auto& a : all) {
            EXPECT_EQ(G.compose(e, a), a);
            EXPECT_EQ(G.compose(a, e), a);
            EXPECT_EQ(G.compose(G.inverse(a), a), e);
            EXPECT_EQ(G.compose(a, G.inverse(a)), e);
            for (const auto& b : all) {
                for (const auto& c : all) {
                    ASSERT_EQ(G.compose(G.compose(a, b), c), G.compose(a, G.compose(b, c)))
                        << G.id();
                }
            }
        }
    }
}

TEST(Symmetry, GroupAxiomsRandomSymmetric) {
    auto S = SymmetryGroup::symmetric(DomainShape({12}, 1));
    auto draws = S.sample(99, 3000, false);
    for (std::size_t i = 0; i < 1000; ++i) {
        const auto& a = draws[3 * i];
        const auto& b = draws[3 * i + 1];
        const auto& c = draws[3 * i + 2];
        ASSERT_EQ(S.compose(S.compose(a, b), c), S.compose(a, S.compose(b, c)));
        ASSERT_EQ(S.compose(S.inverse(a), a), S.identity());
        ASSERT_EQ(S.compose(a, S.identity()), a);
    }
}

TEST(Symmetry, RepresentationHomomorphismAndOrthogonality) {
    std::uint64_t seed = 1;
    for (const auto& G : small_groups()) {
        auto all = G.enumerate();
        auto x = random_signal(G.acts_on(), seed++);
        double norm = 0.0;
        for (double v : x.values) norm += v * v;
        for (const auto& a : all) {
            const auto ax = G.act(a, x);
            double n2 = 0.0;
            for (double v : ax.values) n2 += v * v;
            std::vector<double> s1(x.values), s2(ax.values);
            std::sort(s1.begin(), s1.end());
            std::sort(s2.begin(), s2.end());
            EXPECT_EQ(s1, s2);
            EXPECT_NEAR(n2, norm, 1e-12 * norm);
            for (const auto& b : all) {
                ASSERT_EQ(G.act(G.compose(a, b), x).values, G.act(a, G.act(b, x)).values) << G.id();
            }
        }
    }
}

TEST(Symmetry, OneHotStaysOneHot) {
    for (const auto& G : small_groups()) {
        const auto& shape = G.acts_on();
        for (std::size_t i = 0; i < shape.size(); ++i) {
            Signal x = Signal::zeros(shape);
            x.values[i] = 1.0;
            for (const auto& g : G.enumerate()) {
                auto y = G.act(g, x);
                EXPECT_EQ(std::count(y.values.begin(), y.values.end(), 1.0), 1);
                EXPECT_EQ(std::count(y.values.begin(), y.values.end(), 0.0),
                          static_cast<long>(y.values.size()) - 1);
            }
        }
    }
}

TEST(Symmetry, ParamStringsRoundTrip) {
    for (const auto& G : small_groups()) {
        for (const auto& g : G.enumerate()) {
            EXPECT_EQ(G.parse_element(to_param_string(g)), g);
        }
    }
    auto C = SymmetryGroup::cyclic(DomainShape({4}, 1));
    EXPECT_THROW(C.parse_element("bogus"), FormatError);
}

TEST(Symmetry, ShapeValidation) {
    EXPECT_THROW(DomainShape({0}, 1), InvalidArgumentError);
    EXPECT_THROW(DomainShape({3}, 0), InvalidArgumentError);
    EXPECT_THROW(SymmetryGroup::dihedral4(DomainShape({3, 4}, 1)), InvalidArgumentError);
    EXPECT_THROW(SymmetryGroup::symmetric(DomainShape({3, 3}, 1)), InvalidArgumentError);
    EXPECT_THROW(Signal(DomainShape({3}, 1), {1, 2}), ShapeMismatchError);
    EXPECT_THROW(make_group("spiral", DomainShape({3}, 1)), ConfigError);
}

TEST(Symmetry, IdentityOnlyGroup) {
    auto G = SymmetryGroup::identity_only(DomainShape({5}, 2));
    EXPECT_EQ(G.order().value(), 1u);
    auto x = ramp(G.acts_on());
    EXPECT_EQ(G.act(G.identity(), x).values, x.values);
}
