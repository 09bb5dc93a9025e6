/**
 * @file models.hpp
 * @brief Invariant and approximately invariant classifiers with named
 * representation taps, plus Adam/SGD training with checkpoints.
 *
 * Inputs are Signals; the network sees them as a tensor whose leading
 * dimensions are the domain axes and whose last dimension is the channel.
 * Graph signals bring their adjacency, which enters as a constant.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eqxai/container.hpp"
#include "eqxai/symmetry.hpp"
#include "eqxai/tensor.hpp"

namespace eqxai {

enum class ModelKind {
    all_cnn_1d,
    flatten_cnn_1d,
    all_cnn_2d,
    flatten_cnn_2d,
    deep_set,
    graph_conv,
    bow_mlp,
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
/// True for architectures that are exactly invariant under their group.
bool is_invariant_kind(ModelKind kind);

enum class Tap { equiv, inv, logits };

std::string to_string(Tap tap);
Tap parse_tap(std::string_view name);

/// Last layer: logits = act(z W + b) with act the identity or tanh.
enum class OutputActivation { identity, tanh };

/// Nodes of one forward pass on a tape.
struct ForwardGraph {
    autodiff::Var logits;
    autodiff::Var equiv;
    autodiff::Var inv;
    autodiff::Var penultimate;  // z, the input of the output layer, dims [1, h]
};

struct Checkpoint {
    std::size_t epoch = 0;
    double optimizer_lr = 0.0;
    std::vector<autodiff::NamedTensor> parameters;
};

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 1e-3;
    double weight_decay = 1e-5;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    std::size_t checkpoint_every = 5;
    std::uint64_t seed = 0;
    /// Optional data augmentation: one random element of this group is
    /// applied to each sample every epoch.
    const SymmetryGroup* augment = nullptr;
};

struct TrainResult {
    std::vector<Checkpoint> checkpoints;
    std::vector<double> epoch_loss;
};

class Model {
public:
    /// widths empty selects the desk-scale defaults of the kind.
    static Model build(ModelKind kind, const DomainShape& input, std::size_t classes,
                       std::vector<std::size_t> widths, std::uint64_t seed);

    ModelKind kind() const { return kind_; }
    const DomainShape& input_shape() const { return input_; }
    std::size_t classes() const { return classes_; }
    const std::vector<std::size_t>& widths() const { return widths_; }
    OutputActivation output_activation() const;

    const std::vector<autodiff::NamedTensor>& parameters() const { return params_; }
    void set_parameters(std::vector<autodiff::NamedTensor> params);
    const autodiff::Tensor& parameter(std::string_view name) const;
    std::size_t parameter_index(std::string_view name) const;

    /// Builds the forward graph. `params` holds one Var per parameter, in the
    /// order of parameters(); `x` has dims axes + [channels].
    ForwardGraph graph(autodiff::Tape& tape, autodiff::Var x, const Signal& context,
                       std::span<const autodiff::Var> params) const;
    /// Convenience: parameters as constants.
    ForwardGraph graph(autodiff::Tape& tape, autodiff::Var x, const Signal& context) const;

    std::vector<double> forward(const Signal& x) const;
    std::vector<double> representation(Tap tap, const Signal& x) const;
    std::size_t predict(const Signal& x) const;
    double accuracy(std::span<const Signal> xs, std::span<const std::size_t> ys) const;

    /// Gradient of logit `target` with respect to the input values.
    std::vector<double> input_gradient(const Signal& x, std::size_t target) const;

    autodiff::Tensor input_tensor(const Signal& x) const;
    void check_input(const Signal& x) const;

    Container to_container() const;
    static Model from_container(const Container& c);
    void save(const std::filesystem::path& path) const;
    static Model load(const std::filesystem::path& path);

private:
    Model() = default;

    ModelKind kind_ = ModelKind::all_cnn_1d;
    DomainShape input_;
    std::size_t classes_ = 0;
    std::vector<std::size_t> widths_;
    std::vector<autodiff::NamedTensor> params_;
};

/// Trains in place. Returns the epoch-0 checkpoint, one every
/// checkpoint_every epochs and the final one. Throws DivergenceError on a
/// non-finite loss.
TrainResult train(Model& model, std::span<const Signal> xs, std::span<const std::size_t> ys,
                  const TrainConfig& config);

Container checkpoint_container(const Model& model, const Checkpoint& ckpt);
Checkpoint checkpoint_from_container(const Container& c);

} // namespace eqxai
