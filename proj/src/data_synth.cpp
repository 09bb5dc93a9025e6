#include "eqxai/data_synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "eqxai/container.hpp"
#include "eqxai/errors.hpp"
#include "json.hpp"

namespace eqxai {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

double gaussian(Rng& rng, double sd) { return sd > 0.0 ? std::normal_distribution<double>(0.0, sd)(rng) : 0.0; }

double circular_bump(std::size_t t, double centre, double width, std::size_t T) {
    double d = std::fabs(static_cast<double>(t) - centre);
    d = std::min(d, static_cast<double>(T) - d);
    return std::exp(-d * d / (2.0 * width * width));
}

// --- generators -----------------------------------------------------------

constexpr std::size_t kEcgLength = 32;
constexpr std::size_t kImageSide = 12;
constexpr std::size_t kCloudPoints = 32;
constexpr std::size_t kBagLength = 16;
constexpr std::size_t kVocabulary = 64;
constexpr std::size_t kGraphNodes = 12;
constexpr std::size_t kSpecies = 4;

Sample make_ecg(Rng& rng, std::size_t label, double noise) {
    const std::size_t T = kEcgLength;
    const std::size_t shift = uniform_index(rng, T);
    const double amp = uniform(rng, 0.8, 1.2);
    const bool double_bump = uniform(rng, 0.0, 1.0) < 0.5;
    std::vector<double> v(T);
    for (std::size_t t = 0; t < T; ++t) {
        const double s = static_cast<double>(shift);
        double value = amp * circular_bump(t, s, 2.5, T);
        if (label == 1) value += 1.5 * circular_bump(t, std::fmod(s + 6.0, T), 0.6, T);
        if (double_bump) value += 0.6 * circular_bump(t, std::fmod(s + 16.0, T), 2.0, T);
        v[t] = value + gaussian(rng, noise);
    }
    Sample smp{Signal(DomainShape({T}, 1), std::move(v)), label, {label == 1, double_bump}, ""};
    smp.latent = "shift=" + std::to_string(shift) + ";double_bump=" + std::to_string(double_bump);
    return smp;
}

Sample make_image(Rng& rng, std::size_t label, double noise) {
    const std::size_t S = kImageSide;
    const std::size_t ox = uniform_index(rng, S);
    const std::size_t oy = uniform_index(rng, S);
    const double amp = uniform(rng, 0.8, 1.2);
    const bool horizontal = uniform(rng, 0.0, 1.0) < 0.5;
    std::vector<double> v(S * S, 0.0);
    auto set = [&](std::size_t a, std::size_t b) { v[((ox + a) % S) * S + (oy + b) % S] = amp; };
    if (label == 0) {
        for (std::size_t i = 0; i < 4; ++i) horizontal ? set(0, i) : set(i, 0);
    } else {
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = 0; b < 3; ++b) {
                if (a != 1 || b != 1) set(a, b);
            }
        }
    }
    for (auto& x : v) x += gaussian(rng, noise);
    const bool horizontal_line = label == 0 && horizontal;
    Sample smp{Signal(DomainShape({S, S}, 1), std::move(v)), label, {label == 1, horizontal_line}, ""};
    smp.latent = "offset=" + std::to_string(ox) + "," + std::to_string(oy);
    return smp;
}

std::array<double, 3> random_direction(Rng& rng) {
    std::array<double, 3> d{};
    double n = 0.0;
    do {
        for (auto& c : d) c = gaussian(rng, 1.0);
        n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    } while (n < 1e-6);
    for (auto& c : d) c /= n;
    return d;
}

Sample make_cloud(Rng& rng, std::size_t label, double noise) {
    const std::size_t N = kCloudPoints;
    const double r = uniform(rng, 0.8, 1.2);
    std::array<double, 3> centre{uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)};
    const auto axis = random_direction(rng);
    std::vector<double> v(N * 3);
    for (std::size_t i = 0; i < N; ++i) {
        std::array<double, 3> p{};
        if (label == 0) {
            p = random_direction(rng);
            for (auto& c : p) c *= r;
        } else if (label == 1) {
            const double a = 0.8 * r;
            for (auto& c : p) c = uniform(rng, -a, a);
            const std::size_t face = uniform_index(rng, 3);
            p[face] = uniform(rng, 0.0, 1.0) < 0.5 ? -a : a;
        } else {
            const double t = uniform(rng, -1.5, 1.5) * r;
            for (std::size_t c = 0; c < 3; ++c) p[c] = t * axis[c];
        }
        for (std::size_t c = 0; c < 3; ++c) v[i * 3 + c] = p[c] + centre[c] + gaussian(rng, noise);
    }
    Sample smp{Signal(DomainShape({N}, 3), std::move(v)), label, {label == 2, label == 1}, ""};
    smp.latent = "radius=" + std::to_string(r);
    return smp;
}

Sample make_bag(Rng& rng, std::size_t label) {
    const std::size_t T = kBagLength;
    const std::size_t V = kVocabulary;
    std::vector<double> v(T * V, 0.0);
    bool marker = false;
    std::size_t high = 0;
    std::ostringstream latent;
    for (std::size_t t = 0; t < T; ++t) {
        std::size_t token = uniform(rng, 0.0, 1.0) < 0.6 ? label * (V / 2) + uniform_index(rng, V / 2)
                                                           : uniform_index(rng, V);
        v[t * V + token] = 1.0;
        marker = marker || token < 4;
        high += token >= V / 2;
        latent << (t ? "," : "tokens=") << token;
    }
    Sample smp{Signal(DomainShape({T}, V), std::move(v)), label, {marker, high >= 9}, latent.str()};
    return smp;
}

bool has_common_neighbour(const std::vector<double>& A, std::size_t n, std::size_t a, std::size_t b) {
    for (std::size_t c = 0; c < n; ++c) {
        if (A[a * n + c] != 0.0 && A[b * n + c] != 0.0) return true;
    }
    return false;
}

Sample make_graph(Rng& rng, std::size_t label) {
    const std::size_t N = kGraphNodes;
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> A(N * N, 0.0);
    auto link = [&](std::size_t a, std::size_t b) {
        A[a * N + b] = 1.0;
        A[b * N + a] = 1.0;
    };
    // Random recursive tree: triangle-free.
    for (std::size_t i = 1; i < N; ++i) link(perm[i], perm[uniform_index(rng, i)]);
    // Two extra edges that do not close a triangle.
    for (int extra = 0, tries = 0; extra < 2 && tries < 100; ++tries) {
        const std::size_t a = uniform_index(rng, N);
        const std::size_t b = uniform_index(rng, N);
        if (a == b || A[a * N + b] != 0.0 || has_common_neighbour(A, N, a, b)) continue;
        link(a, b);
        ++extra;
    }
    if (label == 1) {
        std::vector<std::size_t> nodes(N);
        std::iota(nodes.begin(), nodes.end(), std::size_t{0});
        std::shuffle(nodes.begin(), nodes.end(), rng);
        link(nodes[0], nodes[1]);
        link(nodes[1], nodes[2]);
        link(nodes[0], nodes[2]);
    }
    std::vector<double> v(N * kSpecies, 0.0);
    for (std::size_t i = 0; i < N; ++i) v[i * kSpecies + uniform_index(rng, kSpecies)] = 1.0;
    std::size_t max_degree = 0;
    for (std::size_t i = 0; i < N; ++i) {
        std::size_t deg = 0;
        for (std::size_t j = 0; j < N; ++j) deg += A[i * N + j] != 0.0;
        max_degree = std::max(max_degree, deg);
    }
    const bool triangle = count_triangles(A, N) > 0;
    Sample smp{Signal(DomainShape({N}, kSpecies), std::move(v), std::move(A)), label,
               {triangle, max_degree >= 4}, "max_degree=" + std::to_string(max_degree)};
    return smp;
}

struct KindInfo {
    DatasetKind kind;
    const char* name;
    const char* group;
    std::size_t classes;
    std::vector<std::string> concepts;
};

const std::vector<KindInfo>& kinds() {
    static const std::vector<KindInfo> table = {
        {DatasetKind::ecg_like, "ecg_like", "cyclic", 2, {"has_spike", "has_double_bump"}},
        {DatasetKind::toy_images, "toy_images", "cyclic2d", 2, {"closed_shape", "horizontal_line"}},
        {DatasetKind::point_clouds, "point_clouds", "symmetric", 3, {"is_elongated", "has_corners"}},
        {DatasetKind::token_bags, "token_bags", "symmetric", 2, {"has_marker", "mostly_high_tokens"}},
        {DatasetKind::motif_graphs, "motif_graphs", "symmetric", 2, {"has_triangle", "has_hub"}},
    };
    return table;
}

const KindInfo& info(DatasetKind kind) {
    for (const auto& k : kinds()) {
        if (k.kind == kind) return k;
    }
    throw InvalidArgumentError("unknown dataset kind");
}

DomainShape shape_of(DatasetKind kind) {
    switch (kind) {
    case DatasetKind::ecg_like: return DomainShape({kEcgLength}, 1);
    case DatasetKind::toy_images: return DomainShape({kImageSide, kImageSide}, 1);
    case DatasetKind::point_clouds: return DomainShape({kCloudPoints}, 3);
    case DatasetKind::token_bags: return DomainShape({kBagLength}, kVocabulary);
    case DatasetKind::motif_graphs: return DomainShape({kGraphNodes}, kSpecies);
    }
    return {};
}

Sample make_sample(DatasetKind kind, Rng& rng, std::size_t label, double noise) {
    switch (kind) {
    case DatasetKind::ecg_like: return make_ecg(rng, label, noise);
    case DatasetKind::toy_images: return make_image(rng, label, noise);
    case DatasetKind::point_clouds: return make_cloud(rng, label, noise);
    case DatasetKind::token_bags: return make_bag(rng, label);
    case DatasetKind::motif_graphs: return make_graph(rng, label);
    }
    throw InvalidArgumentError("unknown dataset kind");
}

std::vector<Sample> make_split(const DatasetSpec& spec, std::size_t n, std::uint64_t stream) {
    const auto classes = info(spec.kind).classes;
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        // One generator per sample keeps every sample reproducible on its own.
        Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + stream * 1000003ULL + i);
        out.push_back(make_sample(spec.kind, rng, i % classes, spec.noise_level));
    }
    return out;
}

std::vector<double> autocorrelation(const Signal& x) {
    const auto& axes = x.shape.axes;
    const std::size_t C = x.shape.channels;
    const std::size_t W = axes[0];
    const std::size_t H = axes.size() > 1 ? axes[1] : 1;
    std::vector<double> r(W * H, 0.0);
    for (std::size_t du = 0; du < W; ++du) {
        for (std::size_t dv = 0; dv < H; ++dv) {
            double acc = 0.0;
            for (std::size_t u = 0; u < W; ++u) {
                for (std::size_t v = 0; v < H; ++v) {
                    const std::size_t a = u * H + v;
                    const std::size_t b = ((u + du) % W) * H + (v + dv) % H;
                    for (std::size_t c = 0; c < C; ++c) acc += x.values[a * C + c] * x.values[b * C + c];
                }
            }
            r[du * H + dv] = acc;
        }
    }
    return r;
}

} // namespace

std::string to_string(DatasetKind kind) { return info(kind).name; }

DatasetKind parse_dataset_kind(std::string_view name) {
    for (const auto& k : kinds()) {
        if (name == k.name) return k.kind;
    }
    throw InvalidArgumentError("unknown dataset kind: " + std::string(name));
}

std::size_t count_triangles(const std::vector<double>& A, std::size_t n) {
    if (A.size() != n * n) throw ShapeMismatchError("adjacency must be n x n");
    std::size_t count = 0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            if (A[a * n + b] == 0.0) continue;
            for (std::size_t c = b + 1; c < n; ++c) {
                count += A[b * n + c] != 0.0 && A[a * n + c] != 0.0;
            }
        }
    }
    return count;
}

Dataset generate(const DatasetSpec& spec) {
    if (spec.n_train < 1 || spec.n_test < 1) {
        throw InvalidArgumentError("dataset splits need at least one sample");
    }
    if (!(spec.noise_level >= 0.0)) throw InvalidArgumentError("noise level must be non-negative");
    const auto& k = info(spec.kind);
    Dataset d;
    d.spec = spec;
    d.shape = shape_of(spec.kind);
    d.classes = k.classes;
    d.group_kind = k.group;
    d.concept_names = k.concepts;
    d.train = make_split(spec, spec.n_train, 1);
    d.test = make_split(spec, spec.n_test, 2);
    return d;
}

std::vector<Signal> inputs(const std::vector<Sample>& samples) {
    std::vector<Signal> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.x);
    return out;
}

std::vector<std::size_t> labels(const std::vector<Sample>& samples) {
    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
}

std::vector<double> invariant_features(DatasetKind kind, const Signal& x) {
    switch (kind) {
    case DatasetKind::ecg_like:
    case DatasetKind::toy_images: {
        // Normalised by the zero lag so amplitude jitter does not dominate.
        auto r = autocorrelation(x);
        const double r0 = r[0] > 0.0 ? r[0] : 1.0;
        for (auto& v : r) v /= r0;
        return r;
    }
    case DatasetKind::token_bags: {
        const std::size_t V = x.shape.channels;
        std::vector<double> hist(V, 0.0);
        for (std::size_t t = 0; t < x.shape.points(); ++t) {
            for (std::size_t v = 0; v < V; ++v) hist[v] += x.at(t, v);
        }
        return hist;
    }
    case DatasetKind::point_clouds: {
        const std::size_t N = x.shape.points();
        Eigen::MatrixXd P(N, 3);
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t c = 0; c < 3; ++c) P(i, c) = x.at(i, c);
        }
        P.rowwise() -= P.colwise().mean();
        // Sorted pairwise distances relative to their mean: a scale-free
        // fingerprint of the shape.
        std::vector<double> f;
        f.reserve(N * (N - 1) / 2 + 3);
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t j = i + 1; j < N; ++j) f.push_back((P.row(i) - P.row(j)).norm());
        }
        std::sort(f.begin(), f.end());
        double mean = 0.0;
        for (double v : f) mean += v / static_cast<double>(f.size());
        if (mean > 0.0) {
            for (auto& v : f) v /= mean;
        }
        const Eigen::Matrix3d cov = P.transpose() * P / static_cast<double>(N);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        const double trace = std::max(cov.trace(), 1e-12);
        for (int i = 0; i < 3; ++i) f.push_back(3.0 * eig.eigenvalues()(i) / trace);
        return f;
    }
    case DatasetKind::motif_graphs: {
        const std::size_t N = x.shape.points();
        Eigen::MatrixXd A(N, N);
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t j = 0; j < N; ++j) A(i, j) = x.adjacency[i * N + j];
        }
        // Closed walks: trace(A^2) counts edges twice, trace(A^3) triangles six times.
        const Eigen::MatrixXd A2 = A * A;
        std::vector<double> f = {A2.trace() / (2.0 * static_cast<double>(N)), std::log1p((A2 * A).trace() / 6.0)};
        return f;
    }
    }
    return {};
}

double nearest_centroid_accuracy(const Dataset& d) {
    std::vector<std::vector<double>> centroid(d.classes);
    std::vector<std::size_t> count(d.classes, 0);
    for (const auto& s : d.train) {
        auto f = invariant_features(d.spec.kind, s.x);
        auto& c = centroid[s.label];
        if (c.empty()) c.assign(f.size(), 0.0);
        for (std::size_t i = 0; i < f.size(); ++i) c[i] += f[i];
        ++count[s.label];
    }
    for (std::size_t k = 0; k < d.classes; ++k) {
        for (auto& v : centroid[k]) v /= static_cast<double>(std::max<std::size_t>(count[k], 1));
    }
    std::size_t hits = 0;
    for (const auto& s : d.test) {
        const auto f = invariant_features(d.spec.kind, s.x);
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t k = 0; k < d.classes; ++k) {
            if (centroid[k].empty()) continue;
            double dist = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) dist += (f[i] - centroid[k][i]) * (f[i] - centroid[k][i]);
            if (dist < best) {
                best = dist;
                arg = k;
            }
        }
        hits += arg == s.label;
    }
    return static_cast<double>(hits) / static_cast<double>(d.test.size());
}

// --- persistence ----------------------------------------------------------

namespace {

void append_split(Container& c, const std::string& prefix, const std::vector<Sample>& split,
                  const DomainShape& shape, std::size_t n_concepts) {
    using autodiff::Tensor;
    const std::size_t n = split.size();
    Tensor x({n, shape.size()});
    Tensor y({n});
    Tensor con({n, n_concepts});
    const bool graphs = !split.empty() && split.front().x.has_adjacency();
    const std::size_t N = shape.points();
    Tensor adj(graphs ? std::vector<std::size_t>{n, N * N} : std::vector<std::size_t>{0});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(split[i].x.values.begin(), split[i].x.values.end(), x.values.begin() + i * shape.size());
        y.values[i] = static_cast<double>(split[i].label);
        for (std::size_t k = 0; k < n_concepts; ++k) con.values[i * n_concepts + k] = split[i].concepts[k];
        if (graphs) {
            std::copy(split[i].x.adjacency.begin(), split[i].x.adjacency.end(), adj.values.begin() + i * N * N);
        }
    }
    c.tensors.push_back({prefix + ".x", std::move(x)});
    c.tensors.push_back({prefix + ".y", std::move(y)});
    c.tensors.push_back({prefix + ".concepts", std::move(con)});
    if (graphs) c.tensors.push_back({prefix + ".adjacency", std::move(adj)});
}

std::vector<Sample> read_split(const Container& c, const std::string& prefix, const DomainShape& shape,
                               std::size_t n_concepts, const nlohmann::json* latents) {
    const auto& x = c.tensor(prefix + ".x");
    const auto& y = c.tensor(prefix + ".y");
    const auto& con = c.tensor(prefix + ".concepts");
    const autodiff::Tensor* adj = nullptr;
    for (const auto& t : c.tensors) {
        if (t.name == prefix + ".adjacency") adj = &t.value;
    }
    const std::size_t n = y.size();
    const std::size_t N = shape.points();
    if (x.size() != n * shape.size() || con.size() != n * n_concepts) {
        throw FormatError("dataset split " + prefix + " has inconsistent tensor sizes");
    }
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        std::vector<double> v(x.values.begin() + i * shape.size(), x.values.begin() + (i + 1) * shape.size());
        std::vector<double> a;
        if (adj != nullptr) a.assign(adj->values.begin() + i * N * N, adj->values.begin() + (i + 1) * N * N);
        s.x = Signal(shape, std::move(v), std::move(a));
        s.label = static_cast<std::size_t>(y.values[i]);
        for (std::size_t k = 0; k < n_concepts; ++k) s.concepts.push_back(static_cast<int>(con.values[i * n_concepts + k]));
        if (latents != nullptr && i < latents->size()) s.latent = (*latents)[i].get<std::string>();
        out.push_back(std::move(s));
    }
    return out;
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
    return std::filesystem::path(stem.string() + ext);
}

} // namespace

void save_dataset(const std::filesystem::path& stem, const Dataset& d) {
    Container c;
    c.kind = "dataset";
    c.meta["dataset_kind"] = to_string(d.spec.kind);
    c.meta["seed"] = std::to_string(d.spec.seed);
    std::ostringstream noise;
    noise.precision(17);
    noise << d.spec.noise_level;
    c.meta["noise_level"] = noise.str();
    append_split(c, "train", d.train, d.shape, d.concept_names.size());
    append_split(c, "test", d.test, d.shape, d.concept_names.size());
    save_container(with_ext(stem, ".eqx"), c);

    nlohmann::json manifest;
    manifest["format"] = "EQXAI1";
    manifest["kind"] = to_string(d.spec.kind);
    manifest["n_train"] = d.spec.n_train;
    manifest["n_test"] = d.spec.n_test;
    manifest["noise_level"] = d.spec.noise_level;
    manifest["seed"] = d.spec.seed;
    manifest["classes"] = d.classes;
    manifest["group"] = d.group_kind;
    manifest["axes"] = d.shape.axes;
    manifest["channels"] = d.shape.channels;
    manifest["concepts"] = d.concept_names;
    for (const auto& [name, split] : {std::pair{"train", &d.train}, std::pair{"test", &d.test}}) {
        auto& arr = manifest["latent"][name] = nlohmann::json::array();
        for (const auto& s : *split) arr.push_back(s.latent);
    }
    std::ofstream out(with_ext(stem, ".json"));
    if (!out) throw FormatError("cannot write dataset manifest for " + stem.string());
    out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& stem) {
    std::ifstream in(with_ext(stem, ".json"));
    if (!in) throw FormatError("cannot open dataset manifest for " + stem.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset manifest: ") + e.what());
    }
    const Container c = load_container(with_ext(stem, ".eqx"));
    if (c.kind != "dataset") throw FormatError("container is not a dataset");
    Dataset d;
    try {
        d.spec.kind = parse_dataset_kind(manifest.at("kind").get<std::string>());
        d.spec.n_train = manifest.at("n_train").get<std::size_t>();
        d.spec.n_test = manifest.at("n_test").get<std::size_t>();
        d.spec.noise_level = manifest.at("noise_level").get<double>();
        d.spec.seed = manifest.at("seed").get<std::uint64_t>();
        d.classes = manifest.at("classes").get<std::size_t>();
        d.group_kind = manifest.at("group").get<std::string>();
        d.shape = DomainShape(manifest.at("axes").get<std::vector<std::size_t>>(),
                              manifest.at("channels").get<std::size_t>());
        d.concept_names = manifest.at("concepts").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset manifest: ") + e.what());
    }
    const nlohmann::json* lt = manifest.contains("latent") ? &manifest["latent"]["train"] : nullptr;
    const nlohmann::json* le = manifest.contains("latent") ? &manifest["latent"]["test"] : nullptr;
    d.train = read_split(c, "train", d.shape, d.concept_names.size(), lt);
    d.test = read_split(c, "test", d.shape, d.concept_names.size(), le);
    return d;
}

} // namespace eqxai
