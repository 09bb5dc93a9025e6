#include "eqxai/symmetry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "eqxai/errors.hpp"

namespace eqxai {

namespace {

std::size_t product(const std::vector<std::size_t>& v) {
    return std::accumulate(v.begin(), v.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<std::size_t> parse_uints(std::string_view text) {
    std::vector<std::size_t> out;
    while (!text.empty()) {
        const auto comma = text.find(',');
        const auto token = text.substr(0, comma);
        std::size_t value = 0;
        const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
        if (ec != std::errc{} || ptr != token.data() + token.size()) {
            throw FormatError("malformed integer list: " + std::string(text));
        }
        out.push_back(value);
        if (comma == std::string_view::npos) {
            break;
        }
        text.remove_prefix(comma + 1);
    }
    return out;
}

int mod4(int v) { return ((v % 4) + 4) % 4; }

} // namespace

DomainShape::DomainShape(std::vector<std::size_t> axes_, std::size_t channels_)
    : axes(std::move(axes_)), channels(channels_) {
    if (axes.empty()) {
        throw InvalidArgumentError("domain needs at least one axis");
    }
    for (auto extent : axes) {
        if (extent == 0) {
            throw InvalidArgumentError("axis extents must be >= 1");
        }
    }
    if (channels == 0) {
        throw InvalidArgumentError("channel count must be >= 1");
    }
}

std::size_t DomainShape::points() const { return product(axes); }

std::string to_string(const DomainShape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.axes.size(); ++i) {
        out << (i ? "x" : "") << shape.axes[i];
    }
    out << "]x" << shape.channels;
    return out.str();
}

Signal::Signal(DomainShape shape_, std::vector<double> values_, std::vector<double> adjacency_)
    : shape(std::move(shape_)), values(std::move(values_)), adjacency(std::move(adjacency_)) {
    if (values.size() != shape.size()) {
        throw ShapeMismatchError("signal has " + std::to_string(values.size()) +
                                 " values, shape " + to_string(shape) + " needs " +
                                 std::to_string(shape.size()));
    }
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw InvalidArgumentError("signal values must be finite");
        }
    }
    if (!adjacency.empty() && adjacency.size() != shape.points() * shape.points()) {
        throw ShapeMismatchError("adjacency must be points x points");
    }
}

Signal Signal::zeros(const DomainShape& shape) {
    return Signal(shape, std::vector<double>(shape.size(), 0.0));
}

std::string to_param_string(const GroupElement& g) {
    std::ostringstream out;
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, Shift>) {
                out << "shift:" << p.k;
            } else if constexpr (std::is_same_v<T, Shift2d>) {
                out << "shift2d:" << p.dx << ',' << p.dy;
            } else if constexpr (std::is_same_v<T, DihedralElement>) {
                out << "d4:" << p.quarter_turns << ',' << (p.reflect ? 1 : 0);
            } else {
                out << "perm:";
                for (std::size_t i = 0; i < p.image.size(); ++i) {
                    out << (i ? "," : "") << p.image[i];
                }
            }
        },
        g.params);
    return out.str();
}

std::string to_string(ExplanationKind kind) {
    switch (kind) {
    case ExplanationKind::feature_attribution: return "feature_attribution";
    case ExplanationKind::example_importance: return "example_importance";
    case ExplanationKind::concept_scores: return "concept_scores";
    case ExplanationKind::concept_presence: return "concept_presence";
    }
    return "unknown";
}

Explanation Explanation::feature(const Signal& attribution) {
    Explanation e;
    e.kind = ExplanationKind::feature_attribution;
    e.shape = attribution.shape;
    e.values = attribution.values;
    return e;
}

Explanation Explanation::vector(ExplanationKind kind, std::vector<double> values) {
    if (kind == ExplanationKind::feature_attribution) {
        throw InvalidArgumentError("feature attributions need a domain shape");
    }
    Explanation e;
    e.kind = kind;
    e.values = std::move(values);
    return e;
}

Signal Explanation::as_signal() const {
    if (kind != ExplanationKind::feature_attribution) {
        throw InvalidArgumentError("explanation of kind " + to_string(kind) + " is not signal-shaped");
    }
    return Signal(shape, values);
}

// ---------------------------------------------------------------------------

SymmetryGroup::SymmetryGroup(GroupKind kind, DomainShape shape, std::string id)
    : kind_(kind), shape_(std::move(shape)), id_(std::move(id)) {}

SymmetryGroup SymmetryGroup::cyclic(const DomainShape& shape) {
    if (shape.axes.size() != 1) {
        throw InvalidArgumentError("cyclic group acts on a single axis");
    }
    return SymmetryGroup(GroupKind::cyclic, shape, "cyclic(" + std::to_string(shape.axes[0]) + ")");
}

SymmetryGroup SymmetryGroup::cyclic2d(const DomainShape& shape) {
    if (shape.axes.size() != 2) {
        throw InvalidArgumentError("cyclic2d group acts on two axes");
    }
    return SymmetryGroup(GroupKind::cyclic2d, shape,
                         "cyclic2d(" + std::to_string(shape.axes[0]) + "," +
                             std::to_string(shape.axes[1]) + ")");
}

SymmetryGroup SymmetryGroup::dihedral4(const DomainShape& shape) {
    if (shape.axes.size() != 2 || shape.axes[0] != shape.axes[1]) {
        throw InvalidArgumentError("dihedral4 requires a square two-axis domain");
    }
    return SymmetryGroup(GroupKind::dihedral4, shape,
                         "dihedral4(" + std::to_string(shape.axes[0]) + ")");
}

SymmetryGroup SymmetryGroup::symmetric(const DomainShape& shape) {
    if (shape.axes.size() != 1) {
        throw InvalidArgumentError("symmetric group requires a single set axis");
    }
    return SymmetryGroup(GroupKind::symmetric, shape,
                         "symmetric(" + std::to_string(shape.axes[0]) + ")");
}

SymmetryGroup SymmetryGroup::identity_only(const DomainShape& shape) {
    SymmetryGroup g(GroupKind::cyclic, shape, "identity");
    g.trivial_ = true;
    return g;
}

std::optional<std::uint64_t> SymmetryGroup::order() const {
    if (trivial_) {
        return 1;
    }
    switch (kind_) {
    case GroupKind::cyclic: return shape_.axes[0];
    case GroupKind::cyclic2d: return std::uint64_t{shape_.axes[0]} * shape_.axes[1];
    case GroupKind::dihedral4: return 8;
    case GroupKind::symmetric: {
        std::uint64_t result = 1;
        for (std::uint64_t k = 2; k <= shape_.axes[0]; ++k) {
            if (result > UINT64_MAX / k) {
                return std::nullopt;
            }
            result *= k;
        }
        return result;
    }
    }
    return std::nullopt;
}

bool SymmetryGroup::enumerable(std::size_t cap) const {
    const auto n = order();
    return n.has_value() && *n <= cap;
}

GroupElement SymmetryGroup::make(decltype(GroupElement::params) params) const {
    return GroupElement{id_, std::move(params)};
}

GroupElement SymmetryGroup::identity() const {
    if (trivial_) {
        return make(Shift{0});
    }
    switch (kind_) {
    case GroupKind::cyclic: return make(Shift{0});
    case GroupKind::cyclic2d: return make(Shift2d{0, 0});
    case GroupKind::dihedral4: return make(DihedralElement{0, false});
    case GroupKind::symmetric: {
        Permutation p;
        p.image.resize(shape_.axes[0]);
        std::iota(p.image.begin(), p.image.end(), 0u);
        return make(std::move(p));
    }
    }
    return make(Shift{0});
}

bool SymmetryGroup::contains(const GroupElement& g) const {
    if (g.group_id != id_) {
        return false;
    }
    if (trivial_) {
        return std::holds_alternative<Shift>(g.params) && std::get<Shift>(g.params).k == 0;
    }
    switch (kind_) {
    case GroupKind::cyclic:
        return std::holds_alternative<Shift>(g.params) && std::get<Shift>(g.params).k < shape_.axes[0];
    case GroupKind::cyclic2d: {
        const auto* s = std::get_if<Shift2d>(&g.params);
        return s && s->dx < shape_.axes[0] && s->dy < shape_.axes[1];
    }
    case GroupKind::dihedral4: {
        const auto* d = std::get_if<DihedralElement>(&g.params);
        return d && d->quarter_turns >= 0 && d->quarter_turns < 4;
    }
    case GroupKind::symmetric: {
        const auto* p = std::get_if<Permutation>(&g.params);
        if (!p || p->image.size() != shape_.axes[0]) {
            return false;
        }
        std::vector<bool> seen(p->image.size(), false);
        for (auto v : p->image) {
            if (v >= seen.size() || seen[v]) {
                return false;
            }
            seen[v] = true;
        }
        return true;
    }
    }
    return false;
}

void SymmetryGroup::check_member(const GroupElement& g) const {
    if (g.group_id != id_) {
        throw GroupMismatchError("element of " + g.group_id + " used with group " + id_);
    }
    if (!contains(g)) {
        throw InvalidArgumentError("non-canonical element " + to_param_string(g) + " for " + id_);
    }
}

GroupElement SymmetryGroup::compose(const GroupElement& g1, const GroupElement& g2) const {
    check_member(g1);
    check_member(g2);
    if (trivial_) {
        return identity();
    }
    switch (kind_) {
    case GroupKind::cyclic: {
        const auto T = shape_.axes[0];
        return make(Shift{(std::get<Shift>(g1.params).k + std::get<Shift>(g2.params).k) % T});
    }
    case GroupKind::cyclic2d: {
        const auto& a = std::get<Shift2d>(g1.params);
        const auto& b = std::get<Shift2d>(g2.params);
        return make(Shift2d{(a.dx + b.dx) % shape_.axes[0], (a.dy + b.dy) % shape_.axes[1]});
    }
    case GroupKind::dihedral4: {
        // R^a F^s R^b F^t = R^(a + (s ? -b : b)) F^(s xor t), using F R = R^-1 F.
        const auto& a = std::get<DihedralElement>(g1.params);
        const auto& b = std::get<DihedralElement>(g2.params);
        const int turns = a.quarter_turns + (a.reflect ? -b.quarter_turns : b.quarter_turns);
        return make(DihedralElement{mod4(turns), a.reflect != b.reflect});
    }
    case GroupKind::symmetric: {
        const auto& a = std::get<Permutation>(g1.params).image;
        const auto& b = std::get<Permutation>(g2.params).image;
        Permutation out;
        out.image.resize(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            out.image[i] = a[b[i]];
        }
        return make(std::move(out));
    }
    }
    return identity();
}

GroupElement SymmetryGroup::inverse(const GroupElement& g) const {
    check_member(g);
    if (trivial_) {
        return identity();
    }
    switch (kind_) {
    case GroupKind::cyclic: {
        const auto T = shape_.axes[0];
        return make(Shift{(T - std::get<Shift>(g.params).k) % T});
    }
    case GroupKind::cyclic2d: {
        const auto& s = std::get<Shift2d>(g.params);
        return make(Shift2d{(shape_.axes[0] - s.dx) % shape_.axes[0],
                            (shape_.axes[1] - s.dy) % shape_.axes[1]});
    }
    case GroupKind::dihedral4: {
        const auto& d = std::get<DihedralElement>(g.params);
        // Reflections are involutions; pure rotations invert their turn count.
        return d.reflect ? g : make(DihedralElement{mod4(-d.quarter_turns), false});
    }
    case GroupKind::symmetric: {
        const auto& p = std::get<Permutation>(g.params).image;
        Permutation out;
        out.image.resize(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            out.image[p[i]] = static_cast<std::uint32_t>(i);
        }
        return make(std::move(out));
    }
    }
    return identity();
}

std::vector<GroupElement> SymmetryGroup::enumerate(std::size_t cap) const {
    const auto n = order();
    if (!n || *n > cap) {
        throw OrderTooLargeError("group " + id_ + " has order " +
                                 (n ? std::to_string(*n) : std::string("> 2^64")) +
                                 " exceeding enumeration cap " + std::to_string(cap) +
                                 "; use sampling");
    }
    std::vector<GroupElement> out;
    out.reserve(*n);
    if (trivial_) {
        out.push_back(identity());
        return out;
    }
    switch (kind_) {
    case GroupKind::cyclic:
        for (std::size_t k = 0; k < shape_.axes[0]; ++k) {
            out.push_back(make(Shift{k}));
        }
        break;
    case GroupKind::cyclic2d:
        for (std::size_t dx = 0; dx < shape_.axes[0]; ++dx) {
            for (std::size_t dy = 0; dy < shape_.axes[1]; ++dy) {
                out.push_back(make(Shift2d{dx, dy}));
            }
        }
        break;
    case GroupKind::dihedral4:
        for (int reflect = 0; reflect < 2; ++reflect) {
            for (int turns = 0; turns < 4; ++turns) {
                out.push_back(make(DihedralElement{turns, reflect == 1}));
            }
        }
        break;
    case GroupKind::symmetric: {
        Permutation p = std::get<Permutation>(identity().params);
        do {
            out.push_back(make(p));
        } while (std::next_permutation(p.image.begin(), p.image.end()));
        break;
    }
    }
    return out;
}

std::vector<GroupElement> SymmetryGroup::sample(std::uint64_t seed, std::size_t n,
                                                bool without_replacement) const {
    std::vector<GroupElement> out;
    if (n == 0) {
        return out;
    }
    const auto group_order = order();
    if (without_replacement && group_order && n > *group_order) {
        throw InvalidArgumentError("cannot draw " + std::to_string(n) +
                                   " distinct elements from " + id_);
    }
    std::mt19937_64 rng(seed);

    auto draw = [&]() -> GroupElement {
        if (trivial_) {
            return identity();
        }
        switch (kind_) {
        case GroupKind::cyclic: {
            std::uniform_int_distribution<std::size_t> d(0, shape_.axes[0] - 1);
            return make(Shift{d(rng)});
        }
        case GroupKind::cyclic2d: {
            std::uniform_int_distribution<std::size_t> dx(0, shape_.axes[0] - 1);
            std::uniform_int_distribution<std::size_t> dy(0, shape_.axes[1] - 1);
            const auto a = dx(rng);
            return make(Shift2d{a, dy(rng)});
        }
        case GroupKind::dihedral4: {
            std::uniform_int_distribution<int> d(0, 7);
            const int v = d(rng);
            return make(DihedralElement{v % 4, v >= 4});
        }
        case GroupKind::symmetric: {
            Permutation p = std::get<Permutation>(identity().params);
            std::shuffle(p.image.begin(), p.image.end(), rng);
            return make(std::move(p));
        }
        }
        return identity();
    };

    if (!without_replacement) {
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            out.push_back(draw());
        }
        return out;
    }

    if (enumerable()) {
        // A shuffled prefix keeps subsets nested across n for a fixed seed.
        auto all = enumerate();
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(n);
        return all;
    }

    std::set<std::string> seen;
    while (out.size() < n) {
        auto g = draw();
        if (seen.insert(to_param_string(g)).second) {
            out.push_back(std::move(g));
        }
    }
    return out;
}

std::vector<std::size_t> SymmetryGroup::source_points(const GroupElement& g) const {
    check_member(g);
    const std::size_t n = shape_.points();
    std::vector<std::size_t> src(n);
    if (trivial_) {
        std::iota(src.begin(), src.end(), std::size_t{0});
        return src;
    }
    switch (kind_) {
    case GroupKind::cyclic: {
        // (rho[g] x)(t) = x(t - g mod T)
        const auto T = shape_.axes[0];
        const auto k = std::get<Shift>(g.params).k;
        for (std::size_t t = 0; t < T; ++t) {
            src[t] = (t + T - k) % T;
        }
        break;
    }
    case GroupKind::cyclic2d: {
        const auto W = shape_.axes[0];
        const auto H = shape_.axes[1];
        const auto& s = std::get<Shift2d>(g.params);
        for (std::size_t u = 0; u < W; ++u) {
            for (std::size_t v = 0; v < H; ++v) {
                src[u * H + v] = ((u + W - s.dx) % W) * H + (v + H - s.dy) % H;
            }
        }
        break;
    }
    case GroupKind::dihedral4: {
        // Coordinate maps: R(i,j) = (j, n-1-i) and F(i,j) = (i, n-1-j);
        // g = R^turns F^reflect and the content at u comes from g^-1(u).
        const auto side = shape_.axes[0];
        const auto inv = std::get<DihedralElement>(inverse(g).params);
        for (std::size_t i = 0; i < side; ++i) {
            for (std::size_t j = 0; j < side; ++j) {
                std::size_t a = i;
                std::size_t b = j;
                if (inv.reflect) {
                    b = side - 1 - b;
                }
                for (int r = 0; r < inv.quarter_turns; ++r) {
                    const std::size_t na = b;
                    const std::size_t nb = side - 1 - a;
                    a = na;
                    b = nb;
                }
                src[i * side + j] = a * side + b;
            }
        }
        break;
    }
    case GroupKind::symmetric: {
        // (rho[g] x)(n) = x(g^-1(n))
        const auto& p = std::get<Permutation>(g.params).image;
        for (std::size_t i = 0; i < n; ++i) {
            src[p[i]] = i;
        }
        break;
    }
    }
    return src;
}

Signal SymmetryGroup::act(const GroupElement& g, const Signal& x) const {
    if (x.shape != shape_) {
        throw ShapeMismatchError("signal shape " + to_string(x.shape) + " does not match group domain " +
                                 to_string(shape_));
    }
    const auto src = source_points(g);
    const std::size_t C = shape_.channels;
    const std::size_t n = src.size();
    Signal out;
    out.shape = x.shape;
    out.values.resize(x.values.size());
    for (std::size_t u = 0; u < n; ++u) {
        const double* from = x.values.data() + src[u] * C;
        std::copy(from, from + C, out.values.data() + u * C);
    }
    if (x.has_adjacency()) {
        out.adjacency.resize(n * n);
        for (std::size_t u = 0; u < n; ++u) {
            for (std::size_t v = 0; v < n; ++v) {
                out.adjacency[u * n + v] = x.adjacency[src[u] * n + src[v]];
            }
        }
    }
    return out;
}

Explanation SymmetryGroup::act_on_explanation(const GroupElement& g, const Explanation& e,
                                              OutputAction mode) const {
    if (mode == OutputAction::trivial) {
        check_member(g);
        return e;
    }
    if (e.kind != ExplanationKind::feature_attribution) {
        throw InvalidArgumentError("same_as_input action needs a feature attribution, got " +
                                   to_string(e.kind));
    }
    return Explanation::feature(act(g, e.as_signal()));
}

GroupElement SymmetryGroup::parse_element(std::string_view text) const {
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw FormatError("group element needs 'kind:params': " + std::string(text));
    }
    const auto tag = text.substr(0, colon);
    const auto values = parse_uints(text.substr(colon + 1));
    GroupElement g;
    if (tag == "shift" && values.size() == 1) {
        g = make(Shift{values[0]});
    } else if (tag == "shift2d" && values.size() == 2) {
        g = make(Shift2d{values[0], values[1]});
    } else if (tag == "d4" && values.size() == 2 && values[1] <= 1) {
        g = make(DihedralElement{static_cast<int>(values[0]), values[1] == 1});
    } else if (tag == "perm") {
        Permutation p;
        for (auto v : values) {
            p.image.push_back(static_cast<std::uint32_t>(v));
        }
        g = make(std::move(p));
    } else {
        throw FormatError("unrecognised group element: " + std::string(text));
    }
    check_member(g);
    return g;
}

SymmetryGroup make_group(std::string_view kind, const DomainShape& shape) {
    if (kind == "cyclic") return SymmetryGroup::cyclic(shape);
    if (kind == "cyclic2d") return SymmetryGroup::cyclic2d(shape);
    if (kind == "dihedral4") return SymmetryGroup::dihedral4(shape);
    if (kind == "symmetric") return SymmetryGroup::symmetric(shape);
    if (kind == "identity") return SymmetryGroup::identity_only(shape);
    throw ConfigError("unknown group kind: " + std::string(kind));
}

} // namespace eqxai
