/**
 * @file tensor.hpp
 * @brief Dense tensors and a tape-based reverse-mode differentiator.
 *
 * The op set is closed and deliberately small: everything the model zoo
 * and the gradient-based attributions need, each with an exact
 * vector-Jacobian product. Broadcasting is limited to scalar scaling and
 * the explicit row-bias op; shapes are otherwise changed with reshape.
 *
 * Non-smooth ops (relu, leaky_relu, max_over_axis, sub_max_over_set_axis)
 * fold their branch decisions into Tape::branch_signature(), which lets a
 * finite-difference oracle detect stencils that straddle a kink.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace eqxai::autodiff {

struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<double> values;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);
    Tensor(std::vector<std::size_t> dims, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return dims.size(); }
    double item() const;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

std::size_t element_count(const std::vector<std::size_t>& dims);
std::string dims_string(const std::vector<std::size_t>& dims);

class Tape;

/// Handle to a node recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const std::vector<std::size_t>& dims() const { return value().dims; }
};

class Tape {
public:
    using Backward = std::function<void(const Tensor& grad_out, Tape& tape)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradients of a single-element output with respect to each of `wrt`.
    /// Inputs not connected to the output receive zero tensors.
    std::vector<Tensor> backward(Var output, std::span<const Var> wrt);
    Tensor gradient(Var output, Var wrt);

    std::uint64_t branch_signature() const { return branch_signature_; }
    void note_branch(std::uint64_t decision);

    // Op implementation surface.
    Var record(Tensor value, std::vector<std::size_t> parents, Backward backward);
    void accumulate(std::size_t id, const Tensor& grad);
    void accumulate(std::size_t id, Tensor&& grad);

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        std::vector<std::size_t> parents;
        Backward backward;
    };

    std::deque<Node> nodes_;
    std::vector<Tensor> grads_;
    std::uint64_t branch_signature_ = 1469598103934665603ULL;
};

// --- primitive ops -------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);   // Hadamard product
Var scale(Var a, double factor);
/// [m, k] x [k, n] -> [m, n]
Var matmul(Var a, Var b);
/// x[..., n] + bias[n], the bias repeated over all leading positions.
Var add_bias(Var x, Var bias);
/// Same-length circular convolution. x: [T, Cin], w: [Cout, Cin, K].
/// Tap k of output t reads input t + K/2 - k (mod T), so the middle tap
/// sits on t and the kernel is flipped as in a textbook convolution.
Var circular_conv1d(Var x, Var w);
/// x: [W, H, Cin], w: [Cout, Cin, K, K], same tap convention on both axes.
Var circular_conv2d(Var x, Var w);
Var relu(Var x);
Var leaky_relu(Var x, double slope = 0.01);
Var tanh(Var x);
Var max_over_axis(Var x, std::size_t axis);
Var mean_over_axis(Var x, std::size_t axis);
Var sum_over_axis(Var x, std::size_t axis);
Var sum_all(Var x);
/// out[i] = flat(x)[index[i]], reshaped to out_dims.
Var gather_by_index(Var x, std::vector<std::size_t> index, std::vector<std::size_t> out_dims);
/// x[s, i] - max_s' x[s', i] over the leading (set) axis.
Var sub_max_over_set_axis(Var x);
/// Mean-free cross entropy of softmax(logits) against a class index.
Var softmax_cross_entropy(Var logits, std::size_t target);
Var reshape(Var x, std::vector<std::size_t> dims);

// --- numerics helpers ----------------------------------------------------

std::vector<double> softmax(std::span<const double> logits);

using ScalarGraph = std::function<Var(Tape&, Var)>;

struct FiniteDifferenceResult {
    double max_relative_error = 0.0;
    /// False when some stencil point took a different branch of a
    /// non-smooth op than the centre; the difference quotient is then not a
    /// valid oracle for the analytic gradient.
    bool smooth_stencil = true;
};

/// Compares reverse-mode gradients of a scalar graph with fourth-order
/// central differences: max_i |analytic - fd| / (|fd| + 1e-8).
FiniteDifferenceResult finite_difference_check(const ScalarGraph& f, const Tensor& x, double step);

} // namespace eqxai::autodiff
