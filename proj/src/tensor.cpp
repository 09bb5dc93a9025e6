#include "eqxai/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Core>
#include "eqxai/errors.hpp"

namespace eqxai::autodiff {

std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string dims_string(const std::vector<std::size_t>& dims) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        out << (i ? "," : "") << dims[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(std::vector<std::size_t> dims_, double fill)
    : dims(std::move(dims_)), values(element_count(dims), fill) {}

Tensor::Tensor(std::vector<std::size_t> dims_, std::vector<double> values_)
    : dims(std::move(dims_)), values(std::move(values_)) {
    if (values.size() != element_count(dims)) {
        throw ShapeMismatchError("tensor dims " + dims_string(dims) + " need " +
                                 std::to_string(element_count(dims)) + " values, got " +
                                 std::to_string(values.size()));
    }
}

double Tensor::item() const {
    if (values.size() != 1) {
        throw ShapeMismatchError("item() on tensor with dims " + dims_string(dims));
    }
    return values[0];
}

const Tensor& Var::value() const { return tape->value(id); }

// --- tape ------------------------------------------------------------------

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), requires_grad, {}, {}});
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, Backward backward) {
    bool needs = false;
    for (auto p : parents) {
        needs = needs || nodes_[p].requires_grad;
    }
    if (!needs) {
        nodes_.push_back(Node{std::move(value), false, {}, {}});
    } else {
        nodes_.push_back(Node{std::move(value), true, std::move(parents), std::move(backward)});
    }
    return Var{this, nodes_.size() - 1};
}

void Tape::note_branch(std::uint64_t decision) {
    branch_signature_ ^= decision + 0x9e3779b97f4a7c15ULL;
    branch_signature_ *= 1099511628211ULL;
}

void Tape::accumulate(std::size_t id, const Tensor& grad) {
    if (!nodes_[id].requires_grad) {
        return;
    }
    auto& slot = grads_[id];
    if (slot.values.empty()) {
        slot = grad;
        return;
    }
    for (std::size_t i = 0; i < slot.values.size(); ++i) {
        slot.values[i] += grad.values[i];
    }
}

void Tape::accumulate(std::size_t id, Tensor&& grad) {
    if (!nodes_[id].requires_grad) {
        return;
    }
    auto& slot = grads_[id];
    if (slot.values.empty()) {
        slot = std::move(grad);
        return;
    }
    for (std::size_t i = 0; i < slot.values.size(); ++i) {
        slot.values[i] += grad.values[i];
    }
}

std::vector<Tensor> Tape::backward(Var output, std::span<const Var> wrt) {
    if (output.tape != this) {
        throw InvalidArgumentError("output belongs to another tape");
    }
    const Tensor& out_value = nodes_[output.id].value;
    if (out_value.size() != 1) {
        throw ShapeMismatchError("backward needs a single-element output, got dims " +
                                 dims_string(out_value.dims));
    }
    grads_.assign(nodes_.size(), Tensor{});
    grads_[output.id] = Tensor(out_value.dims, 1.0);
    for (std::size_t id = output.id + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (grads_[id].values.empty() || !node.requires_grad || !node.backward) {
            continue;
        }
        node.backward(grads_[id], *this);
    }
    std::vector<Tensor> result;
    result.reserve(wrt.size());
    for (const auto& w : wrt) {
        if (w.tape != this) {
            throw InvalidArgumentError("gradient requested for a variable on another tape");
        }
        if (grads_[w.id].values.empty()) {
            result.emplace_back(nodes_[w.id].value.dims, 0.0);
        } else {
            result.push_back(grads_[w.id]);
        }
    }
    grads_.clear();
    return result;
}

Tensor Tape::gradient(Var output, Var wrt) {
    const Var w[] = {wrt};
    return std::move(backward(output, w)[0]);
}

// --- ops -------------------------------------------------------------------

namespace {

void require_same_dims(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dims != b.dims) {
        throw ShapeMismatchError(std::string(op) + ": dims " + dims_string(a.dims) + " vs " +
                                 dims_string(b.dims));
    }
}

Tape& tape_of(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw InvalidArgumentError("operands live on different tapes");
    }
    return *a.tape;
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
    std::vector<std::size_t> reduced_dims;
};

AxisSplit split_axis(const std::vector<std::size_t>& dims, std::size_t axis) {
    if (axis >= dims.size()) {
        throw ShapeMismatchError("axis " + std::to_string(axis) + " out of range for dims " +
                                 dims_string(dims));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= dims[i];
    s.extent = dims[axis];
    for (std::size_t i = axis + 1; i < dims.size(); ++i) s.inner *= dims[i];
    s.reduced_dims = dims;
    s.reduced_dims.erase(s.reduced_dims.begin() + static_cast<std::ptrdiff_t>(axis));
    return s;
}

} // namespace

Var add(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same_dims(x, y, "add");
    Tensor out(x.dims);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = x.values[i] + y.values[i];
    const auto ia = a.id;
    const auto ib = b.id;
    return tape.record(std::move(out), {ia, ib}, [ia, ib](const Tensor& g, Tape& t) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same_dims(x, y, "sub");
    Tensor out(x.dims);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = x.values[i] - y.values[i];
    const auto ia = a.id;
    const auto ib = b.id;
    return tape.record(std::move(out), {ia, ib}, [ia, ib](const Tensor& g, Tape& t) {
        t.accumulate(ia, g);
        Tensor neg = g;
        for (auto& v : neg.values) v = -v;
        t.accumulate(ib, std::move(neg));
    });
}

Var mul(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same_dims(x, y, "mul");
    Tensor out(x.dims);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = x.values[i] * y.values[i];
    const auto ia = a.id;
    const auto ib = b.id;
    return tape.record(std::move(out), {ia, ib}, [ia, ib](const Tensor& g, Tape& t) {
        const Tensor& xv = t.value(ia);
        const Tensor& yv = t.value(ib);
        Tensor ga(g.dims);
        Tensor gb(g.dims);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.values[i] = g.values[i] * yv.values[i];
            gb.values[i] = g.values[i] * xv.values[i];
        }
        t.accumulate(ia, std::move(ga));
        t.accumulate(ib, std::move(gb));
    });
}

Var scale(Var a, double factor) {
    Tape& tape = *a.tape;
    Tensor out = a.value();
    for (auto& v : out.values) v *= factor;
    const auto ia = a.id;
    return tape.record(std::move(out), {ia}, [ia, factor](const Tensor& g, Tape& t) {
        Tensor ga = g;
        for (auto& v : ga.values) v *= factor;
        t.accumulate(ia, std::move(ga));
    });
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<RowMajor> rows(double* p, std::size_t r, std::size_t c) {
    return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
Eigen::Map<const RowMajor> crows(const double* p, std::size_t r, std::size_t c) {
    return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

} // namespace

Var matmul(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.rank() != 2 || y.rank() != 2 || x.dims[1] != y.dims[0]) {
        throw ShapeMismatchError("matmul: " + dims_string(x.dims) + " x " + dims_string(y.dims));
    }
    const std::size_t m = x.dims[0];
    const std::size_t k = x.dims[1];
    const std::size_t n = y.dims[1];
    Tensor out({m, n});
    rows(out.values.data(), m, n).noalias() = crows(x.values.data(), m, k) * crows(y.values.data(), k, n);
    const auto ia = a.id;
    const auto ib = b.id;
    return tape.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](const Tensor& g, Tape& t) {
        const auto gm = crows(g.values.data(), m, n);
        if (t.requires_grad(ia)) {
            Tensor ga({m, k});
            rows(ga.values.data(), m, k).noalias() = gm * crows(t.value(ib).values.data(), k, n).transpose();
            t.accumulate(ia, std::move(ga));
        }
        if (t.requires_grad(ib)) {
            Tensor gb({k, n});
            rows(gb.values.data(), k, n).noalias() = crows(t.value(ia).values.data(), m, k).transpose() * gm;
            t.accumulate(ib, std::move(gb));
        }
    });
}

Var add_bias(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& x = a.value();
    const Tensor& bias = b.value();
    if (bias.rank() != 1 || x.rank() == 0 || x.dims.back() != bias.dims[0]) {
        throw ShapeMismatchError("add_bias: " + dims_string(x.dims) + " + " + dims_string(bias.dims));
    }
    const std::size_t n = bias.dims[0];
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += bias.values[i % n];
    const auto ia = a.id;
    const auto ib = b.id;
    return tape.record(std::move(out), {ia, ib}, [ia, ib, n](const Tensor& g, Tape& t) {
        t.accumulate(ia, g);
        Tensor gb({n});
        for (std::size_t i = 0; i < g.size(); ++i) gb.values[i % n] += g.values[i];
        t.accumulate(ib, std::move(gb));
    });
}

Var circular_conv1d(Var a, Var w) {
    Tape& tape = tape_of(a, w);
    const Tensor& x = a.value();
    const Tensor& k = w.value();
    if (x.rank() != 2 || k.rank() != 3 || k.dims[1] != x.dims[1]) {
        throw ShapeMismatchError("circular_conv1d: input " + dims_string(x.dims) + ", kernel " +
                                 dims_string(k.dims));
    }
    const std::size_t T = x.dims[0];
    const std::size_t Cin = x.dims[1];
    const std::size_t Cout = k.dims[0];
    const std::size_t K = k.dims[2];
    if (K > T) {
        throw ShapeMismatchError("circular_conv1d: kernel size exceeds axis extent");
    }
    const std::size_t half = K / 2;
    Tensor out({T, Cout});
    for (std::size_t t = 0; t < T; ++t) {
        double* orow = out.values.data() + t * Cout;
        for (std::size_t kk = 0; kk < K; ++kk) {
            const std::size_t src = (t + T + half - kk) % T;
            const double* xrow = x.values.data() + src * Cin;
            for (std::size_t o = 0; o < Cout; ++o) {
                const double* wrow = k.values.data() + o * Cin * K + kk;
                double acc = 0.0;
                for (std::size_t c = 0; c < Cin; ++c) acc += wrow[c * K] * xrow[c];
                orow[o] += acc;
            }
        }
    }
    const auto ia = a.id;
    const auto iw = w.id;
    return tape.record(std::move(out), {ia, iw}, [=](const Tensor& g, Tape& t) {
        const Tensor& xv = t.value(ia);
        const Tensor& kv = t.value(iw);
        const bool want_x = t.requires_grad(ia);
        const bool want_w = t.requires_grad(iw);
        Tensor gx(want_x ? xv.dims : std::vector<std::size_t>{0});
        Tensor gw(want_w ? kv.dims : std::vector<std::size_t>{0});
        for (std::size_t tt = 0; tt < T; ++tt) {
            const double* grow = g.values.data() + tt * Cout;
            for (std::size_t kk = 0; kk < K; ++kk) {
                const std::size_t src = (tt + T + half - kk) % T;
                const double* xrow = xv.values.data() + src * Cin;
                for (std::size_t o = 0; o < Cout; ++o) {
                    const double go = grow[o];
                    if (go == 0.0) continue;
                    const std::size_t base = o * Cin * K + kk;
                    for (std::size_t c = 0; c < Cin; ++c) {
                        if (want_x) gx.values[src * Cin + c] += go * kv.values[base + c * K];
                        if (want_w) gw.values[base + c * K] += go * xrow[c];
                    }
                }
            }
        }
        if (want_x) t.accumulate(ia, std::move(gx));
        if (want_w) t.accumulate(iw, std::move(gw));
    });
}

Var circular_conv2d(Var a, Var w) {
    Tape& tape = tape_of(a, w);
    const Tensor& x = a.value();
    const Tensor& k = w.value();
    if (x.rank() != 3 || k.rank() != 4 || k.dims[1] != x.dims[2] || k.dims[2] != k.dims[3]) {
        throw ShapeMismatchError("circular_conv2d: input " + dims_string(x.dims) + ", kernel " +
                                 dims_string(k.dims));
    }
    const std::size_t W = x.dims[0];
    const std::size_t H = x.dims[1];
    const std::size_t Cin = x.dims[2];
    const std::size_t Cout = k.dims[0];
    const std::size_t K = k.dims[2];
    if (K > W || K > H) {
        throw ShapeMismatchError("circular_conv2d: kernel size exceeds axis extent");
    }
    const std::size_t half = K / 2;
    const std::size_t KK = K * K;
    Tensor out({W, H, Cout});
    for (std::size_t u = 0; u < W; ++u) {
        for (std::size_t v = 0; v < H; ++v) {
            double* orow = out.values.data() + (u * H + v) * Cout;
            for (std::size_t ka = 0; ka < K; ++ka) {
                const std::size_t su = (u + W + half - ka) % W;
                for (std::size_t kb = 0; kb < K; ++kb) {
                    const std::size_t sv = (v + H + half - kb) % H;
                    const double* xrow = x.values.data() + (su * H + sv) * Cin;
                    const std::size_t tap = ka * K + kb;
                    for (std::size_t o = 0; o < Cout; ++o) {
                        const double* wrow = k.values.data() + o * Cin * KK + tap;
                        double acc = 0.0;
                        for (std::size_t c = 0; c < Cin; ++c) acc += wrow[c * KK] * xrow[c];
                        orow[o] += acc;
                    }
                }
            }
        }
    }
    const auto ia = a.id;
    const auto iw = w.id;
    return tape.record(std::move(out), {ia, iw}, [=](const Tensor& g, Tape& t) {
        const Tensor& xv = t.value(ia);
        const Tensor& kv = t.value(iw);
        const bool want_x = t.requires_grad(ia);
        const bool want_w = t.requires_grad(iw);
        Tensor gx(want_x ? xv.dims : std::vector<std::size_t>{0});
        Tensor gw(want_w ? kv.dims : std::vector<std::size_t>{0});
        for (std::size_t u = 0; u < W; ++u) {
            for (std::size_t v = 0; v < H; ++v) {
                const double* grow = g.values.data() + (u * H + v) * Cout;
                for (std::size_t ka = 0; ka < K; ++ka) {
                    const std::size_t su = (u + W + half - ka) % W;
                    for (std::size_t kb = 0; kb < K; ++kb) {
                        const std::size_t sv = (v + H + half - kb) % H;
                        const std::size_t src = (su * H + sv) * Cin;
                        const std::size_t tap = ka * K + kb;
                        for (std::size_t o = 0; o < Cout; ++o) {
                            const double go = grow[o];
                            if (go == 0.0) continue;
                            const std::size_t base = o * Cin * KK + tap;
                            for (std::size_t c = 0; c < Cin; ++c) {
                                if (want_x) gx.values[src + c] += go * kv.values[base + c * KK];
                                if (want_w) gw.values[base + c * KK] += go * xv.values[src + c];
                            }
                        }
                    }
                }
            }
        }
        if (want_x) t.accumulate(ia, std::move(gx));
        if (want_w) t.accumulate(iw, std::move(gw));
    });
}

namespace {

Var piecewise_linear(Var a, double negative_slope) {
    Tape& tape = *a.tape;
    const Tensor& x = a.value();
    Tensor out(x.dims);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool positive = x.values[i] > 0.0;
        out.values[i] = positive ? x.values[i] : negative_slope * x.values[i];
        bits = (bits << 1) | (positive ? 1u : 0u);
        if ((i & 63) == 63) {
            tape.note_branch(bits);
            bits = 0;
        }
    }
    tape.note_branch(bits);
    const auto ia = a.id;
    return tape.record(std::move(out), {ia}, [ia, negative_slope](const Tensor& g, Tape& t) {
        const Tensor& xv = t.value(ia);
        Tensor ga(g.dims);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.values[i] = xv.values[i] > 0.0 ? g.values[i] : negative_slope * g.values[i];
        }
        t.accumulate(ia, std::move(ga));
    });
}

} // namespace

Var relu(Var x) { return piecewise_linear(x, 0.0); }

Var leaky_relu(Var x, double slope) { return piecewise_linear(x, slope); }

Var tanh(Var a) {
    Tape& tape = *a.tape;
    Tensor out = a.value();
    for (auto& v : out.values) v = std::tanh(v);
    const auto ia = a.id;
    const auto iy = tape.size();  // id the output node is about to receive
    return tape.record(std::move(out), {ia}, [ia, iy](const Tensor& g, Tape& t) {
        const Tensor& y = t.value(iy);
        Tensor ga(g.dims);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.values[i] = g.values[i] * (1.0 - y.values[i] * y.values[i]);
        }
        t.accumulate(ia, std::move(ga));
    });
}

Var max_over_axis(Var a, std::size_t axis) {
    Tape& tape = *a.tape;
    const Tensor& x = a.value();
    const AxisSplit s = split_axis(x.dims, axis);
    Tensor out(s.reduced_dims);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t best = 0;
            double best_value = x.values[o * s.extent * s.inner + i];
            for (std::size_t e = 1; e < s.extent; ++e) {
                const double v = x.values[(o * s.extent + e) * s.inner + i];
                if (v > best_value) {
                    best_value = v;
                    best = e;
                }
            }
            out.values[o * s.inner + i] = best_value;
            argmax[o * s.inner + i] = best;
            tape.note_branch(best);
        }
    }
    const auto ia = a.id;
    return tape.record(std::move(out), {ia}, [ia, s, argmax = std::move(argmax)](const Tensor& g, Tape& t) {
        Tensor ga(t.value(ia).dims);
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t r = o * s.inner + i;
                ga.values[(o * s.extent + argmax[r]) * s.inner + i] += g.values[r];
            }
        }
        t.accumulate(ia, std::move(ga));
    });
}

namespace {

Var reduce_sum(Var a, std::size_t axis, double factor) {
    Tape& tape = *a.tape;
    const Tensor& x = a.value();
    const AxisSplit s = split_axis(x.dims, axis);
    Tensor out(s.reduced_dims);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t e = 0; e < s.extent; ++e) {
            const double* src = x.values.data() + (o * s.extent + e) * s.inner;
            double* dst = out.values.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
    }
    if (factor != 1.0) {
        for (auto& v : out.values) v *= factor;
    }
    const auto ia = a.id;
    return tape.record(std::move(out), {ia}, [ia, s, factor](const Tensor& g, Tape& t) {
        Tensor ga(t.value(ia).dims);
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t e = 0; e < s.extent; ++e) {
                double* dst = ga.values.data() + (o * s.extent + e) * s.inner;
                const double* src = g.values.data() + o * s.inner;
                for (std::size_t i = 0; i < s.inner; ++i) dst[i] = factor * src[i];
            }
        }
        t.accumulate(ia, std::move(ga));
    });
}

} // namespace

Var mean_over_axis(Var x, std::size_t axis) {
    const auto extent = x.value().dims.at(axis);
    return reduce_sum(x, axis, 1.0 / static_cast<double>(extent));
}

Var sum_over_axis(Var x, std::size_t axis) { return reduce_sum(x, axis, 1.0); }

Var sum_all(Var x) {
    Var flat = reshape(x, {x.value().size()});
    return sum_over_axis(flat, 0);
}

Var gather_by_index(Var a, std::vector<std::size_t> index, std::vector<std::size_t> out_dims) {
    Tape& tape = *a.tape;
    const Tensor& x = a.value();
    if (element_count(out_dims) != index.size()) {
        throw ShapeMismatchError("gather_by_index: index count does not match output dims");
    }
    Tensor out(std::move(out_dims));
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= x.size()) {
            throw ShapeMismatchError("gather_by_index: index out of range");
        }
        out.values[i] = x.values[index[i]];
    }
    const auto ia = a.id;
    return tape.record(std::move(out), {ia}, [ia, index = std::move(index)](const Tensor& g, Tape& t) {
        Tensor ga(t.value(ia).dims);
        for (std::size_t i = 0; i < index.size(); ++i) ga.values[index[i]] += g.values[i];
        t.accumulate(ia, std::move(ga));
    });
}

Var sub_max_over_set_axis(Var a) {
    Tape& tape = *a.tape;
    const Tensor& x = a.value();
    if (x.rank() < 2) {
        throw ShapeMismatchError("sub_max_over_set_axis needs [set, features...]");
    }
    const std::size_t N = x.dims[0];
    const std::size_t F = x.size() / N;
    std::vector<std::size_t> argmax(F, 0);
    std::vector<double> best(F);
    for (std::size_t i = 0; i < F; ++i) best[i] = x.values[i];
    for (std::size_t s = 1; s < N; ++s) {
        for (std::size_t i = 0; i < F; ++i) {
            const double v = x.values[s * F + i];
            if (v > best[i]) {
                best[i] = v;
                argmax[i] = s;
            }
        }
    }
    for (auto am : argmax) tape.note_branch(am);
    Tensor out(x.dims);
    for (std::size_t s = 0; s < N; ++s) {
        for (std::size_t i = 0; i < F; ++i) out.values[s * F + i] = x.values[s * F + i] - best[i];
    }
    const auto ia = a.id;
    return tape.record(std::move(out), {ia}, [ia, N, F, argmax = std::move(argmax)](const Tensor& g, Tape& t) {
        Tensor ga = g;
        for (std::size_t i = 0; i < F; ++i) {
            double column = 0.0;
            for (std::size_t s = 0; s < N; ++s) column += g.values[s * F + i];
            ga.values[argmax[i] * F + i] -= column;
        }
        t.accumulate(ia, std::move(ga));
    });
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    if (p.empty()) return p;
    const double m = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (auto& v : p) {
        v = std::exp(v - m);
        z += v;
    }
    for (auto& v : p) v /= z;
    return p;
}

Var softmax_cross_entropy(Var a, std::size_t target) {
    Tape& tape = *a.tape;
    const Tensor& z = a.value();
    if (target >= z.size()) {
        throw InvalidArgumentError("softmax_cross_entropy: target " + std::to_string(target) +
                                   " out of range for " + std::to_string(z.size()) + " classes");
    }
    const double m = *std::max_element(z.values.begin(), z.values.end());
    double sum = 0.0;
    for (double v : z.values) sum += std::exp(v - m);
    const double loss = m + std::log(sum) - z.values[target];
    const auto ia = a.id;
    return tape.record(Tensor::scalar(loss), {ia}, [ia, target](const Tensor& g, Tape& t) {
        const Tensor& zv = t.value(ia);
        Tensor ga(zv.dims);
        ga.values = softmax(zv.values);
        ga.values[target] -= 1.0;
        for (auto& v : ga.values) v *= g.values[0];
        t.accumulate(ia, std::move(ga));
    });
}

Var reshape(Var a, std::vector<std::size_t> dims) {
    Tape& tape = *a.tape;
    const Tensor& x = a.value();
    if (element_count(dims) != x.size()) {
        throw ShapeMismatchError("reshape " + dims_string(x.dims) + " -> " + dims_string(dims));
    }
    Tensor out(std::move(dims), x.values);
    const auto ia = a.id;
    return tape.record(std::move(out), {ia}, [ia](const Tensor& g, Tape& t) {
        Tensor ga(t.value(ia).dims, g.values);
        t.accumulate(ia, std::move(ga));
    });
}

FiniteDifferenceResult finite_difference_check(const ScalarGraph& f, const Tensor& x, double step) {
    if (!(step > 0.0)) {
        throw InvalidArgumentError("finite difference step must be positive");
    }
    Tape tape;
    Var input = tape.leaf(x, true);
    Var out = f(tape, input);
    const std::uint64_t centre = tape.branch_signature();
    const Tensor analytic = tape.gradient(out, input);

    FiniteDifferenceResult result;
    auto evaluate = [&](const Tensor& point) {
        Tape probe;
        Var v = f(probe, probe.leaf(point, false));
        if (probe.branch_signature() != centre) {
            result.smooth_stencil = false;
        }
        return v.value().item();
    };

    // Five-point central stencil: truncation error O(step^4) instead of
    // O(step^2), which keeps the oracle accurate at step 1e-3 on smooth
    // nonlinearities without sinking small gradients into rounding noise.
    Tensor probe_point = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double original = x.values[i];
        auto at = [&](double offset) {
            probe_point.values[i] = original + offset;
            return evaluate(probe_point);
        };
        const double d1 = at(step) - at(-step);
        const double d2 = at(2.0 * step) - at(-2.0 * step);
        probe_point.values[i] = original;
        const double central = (8.0 * d1 - d2) / (12.0 * step);
        const double err = std::abs(analytic.values[i] - central) / (std::abs(central) + 1e-8);
        result.max_relative_error = std::max(result.max_relative_error, err);
    }
    return result;
}

} // namespace eqxai::autodiff
