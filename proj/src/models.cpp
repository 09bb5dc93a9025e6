#include "eqxai/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "eqxai/errors.hpp"
#include "eqxai/parallel.hpp"

namespace eqxai {

using autodiff::NamedTensor;
using autodiff::Tape;
using autodiff::Tensor;
using autodiff::Var;

namespace {

struct KindName {
    ModelKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {ModelKind::all_cnn_1d, "all_cnn_1d"},   {ModelKind::flatten_cnn_1d, "flatten_cnn_1d"},
    {ModelKind::all_cnn_2d, "all_cnn_2d"},   {ModelKind::flatten_cnn_2d, "flatten_cnn_2d"},
    {ModelKind::deep_set, "deep_set"},       {ModelKind::graph_conv, "graph_conv"},
    {ModelKind::bow_mlp, "bow_mlp"},
};

std::vector<std::size_t> default_widths(ModelKind kind) {
    switch (kind) {
    case ModelKind::all_cnn_1d: return {8, 16, 32, 16};
    case ModelKind::flatten_cnn_1d: return {8, 16, 32, 32};
    case ModelKind::all_cnn_2d: return {8, 16, 16, 16};
    case ModelKind::flatten_cnn_2d: return {4, 8, 16, 32};
    case ModelKind::deep_set: return {64};
    case ModelKind::graph_conv: return {16, 16};
    case ModelKind::bow_mlp: return {16, 16};
    }
    return {};
}

std::size_t expected_width_count(ModelKind kind) { return default_widths(kind).size(); }

struct ParamSpec {
    std::string name;
    std::vector<std::size_t> dims;
    std::size_t fan_in;
};

void conv_specs(std::vector<ParamSpec>& out, const std::string& name, std::size_t cin, std::size_t cout,
                bool two_d) {
    const std::size_t K = 3;
    std::vector<std::size_t> dims = two_d ? std::vector<std::size_t>{cout, cin, K, K}
                                          : std::vector<std::size_t>{cout, cin, K};
    const std::size_t fan = cin * K * (two_d ? K : 1);
    out.push_back({name + ".weight", dims, fan});
    out.push_back({name + ".bias", {cout}, fan});
}

void dense_specs(std::vector<ParamSpec>& out, const std::string& name, std::size_t in, std::size_t o,
                 bool bias = true) {
    out.push_back({name + ".weight", {in, o}, in});
    if (bias) out.push_back({name + ".bias", {o}, in});
}

// Parameter layout, in the order graph() consumes it.
std::vector<ParamSpec> layout(ModelKind kind, const DomainShape& in, std::size_t K,
                              const std::vector<std::size_t>& w) {
    std::vector<ParamSpec> s;
    const std::size_t C = in.channels;
    switch (kind) {
    case ModelKind::all_cnn_1d:
    case ModelKind::all_cnn_2d: {
        const bool two_d = kind == ModelKind::all_cnn_2d;
        conv_specs(s, "conv1", C, w[0], two_d);
        conv_specs(s, "conv2", w[0], w[1], two_d);
        conv_specs(s, "conv3", w[1], w[2], two_d);
        dense_specs(s, "dense1", w[2], w[3]);
        dense_specs(s, "dense2", w[3], w[3]);
        dense_specs(s, "out", w[3], K);
        break;
    }
    case ModelKind::flatten_cnn_1d:
    case ModelKind::flatten_cnn_2d: {
        const bool two_d = kind == ModelKind::flatten_cnn_2d;
        conv_specs(s, "conv1", C, w[0], two_d);
        conv_specs(s, "conv2", w[0], w[1], two_d);
        conv_specs(s, "conv3", w[1], w[2], two_d);
        const std::size_t flat = two_d ? (in.axes[0] / 4) * (in.axes[1] / 4) * w[2] : (in.axes[0] / 8) * w[2];
        dense_specs(s, "dense1", flat, w[3]);
        dense_specs(s, "out", w[3], K);
        break;
    }
    case ModelKind::deep_set:
        dense_specs(s, "set1", C, w[0]);
        dense_specs(s, "set2", w[0], w[0]);
        dense_specs(s, "set3", w[0], w[0]);
        dense_specs(s, "dense1", w[0], w[0]);
        dense_specs(s, "out", w[0], K);
        break;
    case ModelKind::graph_conv: {
        std::size_t cin = C;
        for (int l = 1; l <= 3; ++l) {
            const std::string n = "gc" + std::to_string(l);
            s.push_back({n + ".self", {cin, w[0]}, cin});
            s.push_back({n + ".neigh", {cin, w[0]}, cin});
            s.push_back({n + ".bias", {w[0]}, cin});
            cin = w[0];
        }
        dense_specs(s, "dense1", w[0], w[1]);
        dense_specs(s, "out", w[1], K);
        break;
    }
    case ModelKind::bow_mlp:
        dense_specs(s, "embed", C, w[0], false);
        dense_specs(s, "dense1", w[0], w[1]);
        dense_specs(s, "out", w[1], K);
        break;
    }
    return s;
}

void validate(ModelKind kind, const DomainShape& in, std::size_t K, const std::vector<std::size_t>& w) {
    if (K < 2) throw InvalidArgumentError("a classifier needs at least two classes");
    if (w.size() != expected_width_count(kind)) {
        throw InvalidArgumentError(to_string(kind) + " expects " + std::to_string(expected_width_count(kind)) +
                                   " widths, got " + std::to_string(w.size()));
    }
    for (auto v : w) {
        if (v == 0) throw InvalidArgumentError("widths must be positive");
    }
    const bool two_d = kind == ModelKind::all_cnn_2d || kind == ModelKind::flatten_cnn_2d;
    const std::size_t rank = two_d ? 2 : 1;
    if (in.axes.size() != rank) {
        throw ShapeMismatchError(to_string(kind) + " expects " + std::to_string(rank) + " domain axes, got " +
                                 to_string(in));
    }
    if (kind == ModelKind::all_cnn_1d || kind == ModelKind::flatten_cnn_1d || two_d) {
        for (auto a : in.axes) {
            if (a < 3) throw ShapeMismatchError("convolution axes need extent >= 3");
        }
    }
    // The third convolution runs after two 2x poolings and needs room for its kernel.
    if (kind == ModelKind::flatten_cnn_1d && (in.axes[0] % 8 != 0 || in.axes[0] < 16)) {
        throw ShapeMismatchError("flatten_cnn_1d needs a length divisible by 8 and at least 16");
    }
    if (kind == ModelKind::flatten_cnn_2d &&
        (in.axes[0] % 4 != 0 || in.axes[1] % 4 != 0 || in.axes[0] < 12 || in.axes[1] < 12)) {
        throw ShapeMismatchError("flatten_cnn_2d needs sides divisible by 4 and at least 12");
    }
}

struct Cursor {
    std::span<const Var> v;
    std::size_t i = 0;
    Var next() { return v[i++]; }
};

Var dense(Var x, Cursor& p) {
    Var W = p.next();
    Var b = p.next();
    return autodiff::add_bias(autodiff::matmul(x, W), b);
}

Var conv(Var x, Cursor& p, bool two_d) {
    Var W = p.next();
    Var b = p.next();
    Var y = two_d ? autodiff::circular_conv2d(x, W) : autodiff::circular_conv1d(x, W);
    return autodiff::add_bias(y, b);
}

Var maxpool1d(Var x) {
    const auto& d = x.dims();
    return autodiff::max_over_axis(autodiff::reshape(x, {d[0] / 2, 2, d[1]}), 1);
}

Var maxpool2d(Var x) {
    const auto& d = x.dims();
    Var r = autodiff::reshape(x, {d[0] / 2, 2, d[1] / 2, 2, d[2]});
    return autodiff::max_over_axis(autodiff::max_over_axis(r, 3), 1);
}

Var flatten_row(Var x) { return autodiff::reshape(x, {1, x.value().size()}); }

} // namespace

std::string to_string(ModelKind kind) {
    for (const auto& kn : kKindNames) {
        if (kn.kind == kind) return kn.name;
    }
    return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
    for (const auto& kn : kKindNames) {
        if (name == kn.name) return kn.kind;
    }
    throw InvalidArgumentError("unknown model kind: " + std::string(name));
}

bool is_invariant_kind(ModelKind kind) {
    return kind != ModelKind::flatten_cnn_1d && kind != ModelKind::flatten_cnn_2d;
}

std::string to_string(Tap tap) {
    switch (tap) {
    case Tap::equiv: return "equiv";
    case Tap::inv: return "inv";
    case Tap::logits: return "logits";
    }
    return "unknown";
}

Tap parse_tap(std::string_view name) {
    if (name == "equiv") return Tap::equiv;
    if (name == "inv") return Tap::inv;
    if (name == "logits") return Tap::logits;
    throw InvalidArgumentError("unknown layer tap: " + std::string(name));
}

Model Model::build(ModelKind kind, const DomainShape& input, std::size_t classes,
                   std::vector<std::size_t> widths, std::uint64_t seed) {
    if (widths.empty()) widths = default_widths(kind);
    validate(kind, input, classes, widths);
    Model m;
    m.kind_ = kind;
    m.input_ = input;
    m.classes_ = classes;
    m.widths_ = widths;
    std::mt19937_64 rng(seed);
    for (const auto& spec : layout(kind, input, classes, widths)) {
        // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        Tensor t(spec.dims);
        for (auto& v : t.values) v = u(rng);
        m.params_.push_back({spec.name, std::move(t)});
    }
    return m;
}

OutputActivation Model::output_activation() const {
    return kind_ == ModelKind::deep_set ? OutputActivation::tanh : OutputActivation::identity;
}

void Model::set_parameters(std::vector<NamedTensor> params) {
    if (params.size() != params_.size()) {
        throw ShapeMismatchError("parameter count mismatch for " + to_string(kind_));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != params_[i].name || params[i].value.dims != params_[i].value.dims) {
            throw ShapeMismatchError("parameter " + params[i].name + " " + autodiff::dims_string(params[i].value.dims) +
                                     " does not match " + params_[i].name + " " +
                                     autodiff::dims_string(params_[i].value.dims));
        }
    }
    params_ = std::move(params);
}

std::size_t Model::parameter_index(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name == name) return i;
    }
    throw InvalidArgumentError("model has no parameter " + std::string(name));
}

const Tensor& Model::parameter(std::string_view name) const { return params_[parameter_index(name)].value; }

void Model::check_input(const Signal& x) const {
    if (x.shape != input_) {
        throw ShapeMismatchError("model expects " + to_string(input_) + ", got " + to_string(x.shape));
    }
    if (kind_ == ModelKind::graph_conv && !x.has_adjacency()) {
        throw ShapeMismatchError("graph_conv input needs an adjacency matrix");
    }
}

Tensor Model::input_tensor(const Signal& x) const {
    check_input(x);
    auto dims = input_.axes;
    dims.push_back(input_.channels);
    return Tensor(std::move(dims), x.values);
}

ForwardGraph Model::graph(Tape& tape, Var x, const Signal& context, std::span<const Var> params) const {
    if (params.size() != params_.size()) {
        throw InvalidArgumentError("graph() needs one variable per parameter");
    }
    Cursor p{params};
    ForwardGraph g;
    const std::size_t K = classes_;
    auto finish = [&](Var z) {
        g.penultimate = z;
        Var u = dense(z, p);
        if (output_activation() == OutputActivation::tanh) u = autodiff::tanh(u);
        g.logits = autodiff::reshape(u, {K});
    };
    switch (kind_) {
    case ModelKind::all_cnn_1d:
    case ModelKind::all_cnn_2d: {
        const bool two_d = kind_ == ModelKind::all_cnn_2d;
        Var h = autodiff::relu(conv(x, p, two_d));
        h = autodiff::relu(conv(h, p, two_d));
        h = autodiff::relu(conv(h, p, two_d));
        g.equiv = h;
        const std::size_t c = widths_[2];
        Var pooled = autodiff::mean_over_axis(autodiff::reshape(h, {input_.points(), c}), 0);
        g.inv = autodiff::leaky_relu(dense(autodiff::reshape(pooled, {1, c}), p));
        finish(autodiff::leaky_relu(dense(g.inv, p)));
        break;
    }
    case ModelKind::flatten_cnn_1d: {
        Var h = maxpool1d(conv(x, p, false));
        h = maxpool1d(autodiff::relu(conv(h, p, false)));
        h = autodiff::relu(conv(h, p, false));
        g.equiv = h;
        g.inv = autodiff::relu(dense(flatten_row(maxpool1d(h)), p));
        finish(g.inv);
        break;
    }
    case ModelKind::flatten_cnn_2d: {
        Var h = maxpool2d(conv(x, p, true));
        h = maxpool2d(autodiff::relu(conv(h, p, true)));
        h = autodiff::relu(conv(h, p, true));
        g.equiv = h;
        g.inv = autodiff::relu(dense(flatten_row(h), p));
        finish(g.inv);
        break;
    }
    case ModelKind::deep_set: {
        Var h = autodiff::tanh(dense(autodiff::sub_max_over_set_axis(x), p));
        h = autodiff::tanh(dense(autodiff::sub_max_over_set_axis(h), p));
        g.equiv = h;
        h = autodiff::tanh(dense(autodiff::sub_max_over_set_axis(h), p));
        Var pooled = autodiff::reshape(autodiff::max_over_axis(h, 0), {1, widths_[0]});
        g.inv = autodiff::tanh(dense(pooled, p));
        finish(g.inv);
        break;
    }
    case ModelKind::graph_conv: {
        const std::size_t N = input_.points();
        Var A = tape.constant(Tensor({N, N}, context.adjacency));
        Var h = x;
        for (int l = 0; l < 3; ++l) {
            Var self = p.next();
            Var neigh = p.next();
            Var bias = p.next();
            Var msg = autodiff::matmul(autodiff::matmul(A, h), neigh);
            h = autodiff::relu(autodiff::add_bias(autodiff::add(autodiff::matmul(h, self), msg), bias));
        }
        g.equiv = h;
        Var pooled = autodiff::reshape(autodiff::sum_over_axis(h, 0), {1, widths_[0]});
        g.inv = autodiff::relu(dense(pooled, p));
        finish(g.inv);
        break;
    }
    case ModelKind::bow_mlp: {
        Var E = p.next();
        Var h = autodiff::matmul(x, E);
        g.equiv = h;
        Var pooled = autodiff::reshape(autodiff::sum_over_axis(h, 0), {1, widths_[0]});
        g.inv = autodiff::relu(dense(pooled, p));
        finish(g.inv);
        break;
    }
    }
    return g;
}

ForwardGraph Model::graph(Tape& tape, Var x, const Signal& context) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(tape.constant(p.value));
    return graph(tape, x, context, vars);
}

std::vector<double> Model::forward(const Signal& x) const {
    Tape tape;
    return graph(tape, tape.constant(input_tensor(x)), x).logits.value().values;
}

std::vector<double> Model::representation(Tap tap, const Signal& x) const {
    Tape tape;
    auto g = graph(tape, tape.constant(input_tensor(x)), x);
    switch (tap) {
    case Tap::equiv: return g.equiv.value().values;
    case Tap::inv: return g.inv.value().values;
    case Tap::logits: return g.logits.value().values;
    }
    return {};
}

std::size_t Model::predict(const Signal& x) const {
    const auto logits = forward(x);
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double Model::accuracy(std::span<const Signal> xs, std::span<const std::size_t> ys) const {
    if (xs.size() != ys.size() || xs.empty()) {
        throw InvalidArgumentError("accuracy needs matching, nonempty inputs and labels");
    }
    std::vector<char> hit(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) { hit[i] = predict(xs[i]) == ys[i]; });
    return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(xs.size());
}

std::vector<double> Model::input_gradient(const Signal& x, std::size_t target) const {
    if (target >= classes_) {
        throw InvalidArgumentError("target class " + std::to_string(target) + " out of range");
    }
    Tape tape;
    Var in = tape.leaf(input_tensor(x), true);
    auto g = graph(tape, in, x);
    Var y = autodiff::gather_by_index(g.logits, {target}, {});
    return tape.gradient(y, in).values;
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
    return out.str();
}

std::vector<std::size_t> split(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        try {
            out.push_back(std::stoul(tok));
        } catch (const std::exception&) {
            throw FormatError("malformed integer list: " + s);
        }
    }
    return out;
}

void put_model_meta(const Model& m, Container& c) {
    c.meta["model_kind"] = to_string(m.kind());
    c.meta["input_axes"] = join(m.input_shape().axes);
    c.meta["channels"] = std::to_string(m.input_shape().channels);
    c.meta["classes"] = std::to_string(m.classes());
    c.meta["widths"] = join(m.widths());
}

Model model_from_meta(const Container& c) {
    const auto kind = parse_model_kind(c.meta_value("model_kind"));
    const DomainShape shape(split(c.meta_value("input_axes")), std::stoul(c.meta_value("channels")));
    return Model::build(kind, shape, std::stoul(c.meta_value("classes")), split(c.meta_value("widths")), 0);
}

} // namespace

Container Model::to_container() const {
    Container c;
    c.kind = "model";
    put_model_meta(*this, c);
    c.tensors = params_;
    return c;
}

Model Model::from_container(const Container& c) {
    if (c.kind != "model" && c.kind != "checkpoint") {
        throw FormatError("container of kind " + c.kind + " is not a model");
    }
    Model m = model_from_meta(c);
    m.set_parameters(c.tensors);
    return m;
}

void Model::save(const std::filesystem::path& path) const { save_container(path, to_container()); }

Model Model::load(const std::filesystem::path& path) { return from_container(load_container(path)); }

Container checkpoint_container(const Model& model, const Checkpoint& ckpt) {
    Container c;
    c.kind = "checkpoint";
    put_model_meta(model, c);
    c.meta["epoch"] = std::to_string(ckpt.epoch);
    std::ostringstream lr;
    lr.precision(17);
    lr << ckpt.optimizer_lr;
    c.meta["optimizer_lr"] = lr.str();
    c.tensors = ckpt.parameters;
    return c;
}

Checkpoint checkpoint_from_container(const Container& c) {
    if (c.kind != "checkpoint") {
        throw FormatError("container of kind " + c.kind + " is not a checkpoint");
    }
    Checkpoint ck;
    ck.epoch = std::stoul(c.meta_value("epoch"));
    ck.optimizer_lr = std::stod(c.meta_value("optimizer_lr"));
    ck.parameters = c.tensors;
    return ck;
}

TrainResult train(Model& model, std::span<const Signal> xs, std::span<const std::size_t> ys,
                  const TrainConfig& config) {
    if (xs.empty() || xs.size() != ys.size()) {
        throw InvalidArgumentError("training needs a nonempty dataset with one label per example");
    }
    for (auto y : ys) {
        if (y >= model.classes()) throw InvalidArgumentError("label out of range: " + std::to_string(y));
    }
    if (config.batch_size == 0 || !(config.lr >= 0.0)) {
        throw InvalidArgumentError("batch size must be positive and lr non-negative");
    }

    auto params = model.parameters();
    const std::size_t P = params.size();
    std::vector<std::vector<double>> m1(P), m2(P);
    for (std::size_t i = 0; i < P; ++i) {
        m1[i].assign(params[i].value.size(), 0.0);
        m2[i].assign(params[i].value.size(), 0.0);
    }
    TrainResult result;
    auto snapshot = [&](std::size_t epoch) { result.checkpoints.push_back({epoch, config.lr, params}); };
    snapshot(0);

    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(config.seed * 1000003ULL + epoch);
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t B = std::min(config.batch_size, n - start);
            std::vector<std::vector<Tensor>> grads(B);
            std::vector<double> losses(B);
            parallel_for(B, [&](std::size_t b) {
                const std::size_t idx = order[start + b];
                Signal x = xs[idx];
                if (config.augment != nullptr) {
                    const auto g = config.augment->sample(config.seed ^ (epoch * 7919ULL + idx * 104729ULL), 1, false);
                    x = config.augment->act(g[0], x);
                }
                Tape tape;
                std::vector<Var> pv;
                pv.reserve(P);
                for (const auto& p : params) pv.push_back(tape.leaf(p.value, true));
                auto fg = model.graph(tape, tape.constant(model.input_tensor(x)), x, pv);
                Var loss = autodiff::softmax_cross_entropy(fg.logits, ys[idx]);
                losses[b] = loss.value().item();
                grads[b] = tape.backward(loss, pv);
            });
            double batch_loss = 0.0;
            for (double l : losses) batch_loss += l;
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step));
            }
            epoch_loss += batch_loss;
            ++step;
            const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(step));
            for (std::size_t i = 0; i < P; ++i) {
                auto& theta = params[i].value.values;
                for (std::size_t j = 0; j < theta.size(); ++j) {
                    double g = 0.0;
                    for (std::size_t b = 0; b < B; ++b) g += grads[b][i].values[j];
                    g = g / static_cast<double>(B) + config.weight_decay * theta[j];
                    if (config.optimizer == OptimizerKind::sgd) {
                        theta[j] -= config.lr * g;
                    } else {
                        m1[i][j] = 0.9 * m1[i][j] + 0.1 * g;
                        m2[i][j] = 0.999 * m2[i][j] + 0.001 * g * g;
                        theta[j] -= config.lr * (m1[i][j] / bc1) / (std::sqrt(m2[i][j] / bc2) + 1e-8);
                    }
                }
            }
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
        if ((config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) || epoch == config.epochs) {
            snapshot(epoch);
        }
    }
    model.set_parameters(params);
    return result;
}

} // namespace eqxai
