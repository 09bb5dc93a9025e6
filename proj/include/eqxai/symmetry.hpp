/**
 * @file symmetry.hpp
 * @brief Finite symmetry groups acting on signals through permutation
 * representations.
 *
 * A signal lives on a finite domain (a ring of time steps, a torus of
 * pixels, an unordered set of points or graph nodes) and carries a channel
 * vector at every domain point. Every group here acts by moving domain
 * points: (rho[g] x)(u) = x(g^-1 u), channels travelling together with
 * their point. Elements are therefore stored as small parameter records and
 * turned into index maps on demand, never into dense matrices.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace eqxai {

inline constexpr std::size_t kDefaultEnumerationCap = 4096;

struct DomainShape {
    std::vector<std::size_t> axes;
    std::size_t channels = 1;

    DomainShape() = default;
    DomainShape(std::vector<std::size_t> axes, std::size_t channels);

    std::size_t points() const;
    std::size_t size() const { return points() * channels; }

    bool operator==(const DomainShape&) const = default;
};

std::string to_string(const DomainShape& shape);

/// Dense real field over a domain, laid out domain-major (channels fastest).
/// Graph signals additionally carry a row-major node adjacency matrix that
/// is permuted jointly with the node features.
struct Signal {
    DomainShape shape;
    std::vector<double> values;
    std::vector<double> adjacency;

    Signal() = default;
    Signal(DomainShape shape, std::vector<double> values,
           std::vector<double> adjacency = {});

    static Signal zeros(const DomainShape& shape);

    bool has_adjacency() const { return !adjacency.empty(); }
    double at(std::size_t point, std::size_t channel) const {
        return values[point * shape.channels + channel];
    }
};

enum class GroupKind { cyclic, cyclic2d, dihedral4, symmetric };

struct Shift {
    std::size_t k = 0;
    bool operator==(const Shift&) const = default;
};

struct Shift2d {
    std::size_t dx = 0;
    std::size_t dy = 0;
    bool operator==(const Shift2d&) const = default;
};

/// Element rot^quarter_turns * flip^reflect of the square's symmetry group.
struct DihedralElement {
    int quarter_turns = 0;
    bool reflect = false;
    bool operator==(const DihedralElement&) const = default;
};

struct Permutation {
    std::vector<std::uint32_t> image;
    bool operator==(const Permutation&) const = default;
};

struct GroupElement {
    std::string group_id;
    std::variant<Shift, Shift2d, DihedralElement, Permutation> params;

    bool operator==(const GroupElement&) const = default;
};

/// Canonical parameter string, e.g. "shift:3", "shift2d:1,2", "d4:1,0",
/// "perm:3,0,1,2".
std::string to_param_string(const GroupElement& g);

enum class ExplanationKind {
    feature_attribution,
    example_importance,
    concept_scores,
    concept_presence,
};

std::string to_string(ExplanationKind kind);

/// Output of an interpretability method. Feature attributions are shaped like
/// the explained signal; the other kinds are flat vectors.
struct Explanation {
    ExplanationKind kind = ExplanationKind::example_importance;
    DomainShape shape;
    std::vector<double> values;

    static Explanation feature(const Signal& attribution);
    static Explanation vector(ExplanationKind kind, std::vector<double> values);

    Signal as_signal() const;
    bool categorical() const { return kind == ExplanationKind::concept_presence; }
};

/// How the group acts on an explanation: like on the input (feature
/// attributions) or trivially (example and concept explanations).
enum class OutputAction { same_as_input, trivial };

class SymmetryGroup {
public:
    static SymmetryGroup cyclic(const DomainShape& shape);
    static SymmetryGroup cyclic2d(const DomainShape& shape);
    static SymmetryGroup dihedral4(const DomainShape& shape);
    static SymmetryGroup symmetric(const DomainShape& shape);
    /// Trivial group {id} acting on any shape; handy for wiring tests.
    static SymmetryGroup identity_only(const DomainShape& shape);

    GroupKind kind() const { return kind_; }
    const DomainShape& acts_on() const { return shape_; }
    const std::string& id() const { return id_; }

    /// Group order, or nullopt when it does not fit in 64 bits.
    std::optional<std::uint64_t> order() const;
    bool enumerable(std::size_t cap = kDefaultEnumerationCap) const;

    GroupElement identity() const;
    bool contains(const GroupElement& g) const;

    /// g1 o g2, i.e. apply g2 first.
    GroupElement compose(const GroupElement& g1, const GroupElement& g2) const;
    GroupElement inverse(const GroupElement& g) const;

    /// All elements, identity first. Throws OrderTooLargeError above cap.
    std::vector<GroupElement> enumerate(std::size_t cap = kDefaultEnumerationCap) const;

    /// Uniform i.i.d. draws, or a uniform n-subset when without_replacement.
    std::vector<GroupElement> sample(std::uint64_t seed, std::size_t n,
                                     bool without_replacement) const;

    /// src[u] is the domain point whose content lands on u under g.
    std::vector<std::size_t> source_points(const GroupElement& g) const;

    Signal act(const GroupElement& g, const Signal& x) const;
    Explanation act_on_explanation(const GroupElement& g, const Explanation& e,
                                   OutputAction mode) const;

    GroupElement parse_element(std::string_view text) const;

private:
    SymmetryGroup(GroupKind kind, DomainShape shape, std::string id);
    void check_member(const GroupElement& g) const;
    GroupElement make(decltype(GroupElement::params) params) const;

    GroupKind kind_;
    DomainShape shape_;
    std::string id_;
    bool trivial_ = false;
};

/// Builds a group from its configuration name ("cyclic", "cyclic2d",
/// "dihedral4", "symmetric", "identity").
SymmetryGroup make_group(std::string_view kind, const DomainShape& shape);

} // namespace eqxai
