// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pbp/rng.hpp"
#include "pbp/tape.hpp"
#include "pbp/tensor.hpp"

namespace pbp {

enum class GrowthMode : std::uint8_t { Uniform, Doubling };

/// Architecture family of the sweep: a conv stack (3x3 valid conv, ReLU,
/// 2x2 max-pool) followed by a dense head. Widths come from width_schedule;
/// the final dense layer always has num_classes units.
struct ArchitectureSpec {
  std::size_t conv_layers = 0;
  std::size_t linear_layers = 1;
  std::size_t base_width = 8;
  GrowthMode growth_mode = GrowthMode::Uniform;
  double dropout_rate = 0.0;
  double noise_std = 0.0;
  Shape input_shape{2};  // {C,H,W} or {features}
  std::size_t num_classes = 2;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
  /// Hidden widths: conv channels first, then hidden dense units.
  std::vector<std::size_t> hidden_widths() const;
};

std::vector<std::size_t> width_schedule(GrowthMode mode, std::size_t base_width, std::size_t n_layers);

enum class LayerKind : std::uint8_t { Conv2d, Dense, Relu, MaxPool2x2, Flatten, Dropout, GaussianNoise };

enum class ParamRole : std::uint8_t {
  Neuron,          // ordinary weights and biases
  DendriteInput,   // frozen dendrite weights, bias and cascade weights
  DendriteOutput,  // trainable dendrite-to-neuron connection
};

struct Parameter {
  std::string name;
  Tensor value;
  ParamRole role = ParamRole::Neuron;

  bool frozen() const { return role == ParamRole::DendriteInput; }
};

inline constexpr std::size_t kNoParam = std::numeric_limits<std::size_t>::max();

/// Parameter indices of one frozen dendrite per neuron of a layer.
/// Level d of neuron i sees the layer input plus the outputs of levels 0..d-1
/// of neuron i, weighted by prior[d'][i].
struct DendriteLevel {
  std::size_t weight = kNoParam;  // same shape as the layer weight
  std::size_t bias = kNoParam;    // (neurons)
  std::size_t output = kNoParam;  // (neurons)
  std::vector<std::size_t> prior;  // d tensors of shape (neurons)
};

struct Layer {
  LayerKind kind = LayerKind::Relu;
  std::string name;
  std::size_t weight = kNoParam;
  std::size_t bias = kNoParam;
  double rate = 0.0;  // dropout rate or noise stddev
  bool perforated = false;
  std::vector<DendriteLevel> dendrites;

  bool has_weights() const { return kind == LayerKind::Conv2d || kind == LayerKind::Dense; }
};

enum class DendriteFunction : std::uint8_t { Tanh, Relu, Sigmoid };
enum class PerforateTarget : std::uint8_t { LinearOnly, LinearAndConv };

struct PerforationState {
  DendriteFunction forward_fn = DendriteFunction::Tanh;
  PerforateTarget target = PerforateTarget::LinearOnly;
  std::size_t max_dendrites = 1;
};

enum class Mode : std::uint8_t { Train, Eval };

class CandidateBank;

struct ForwardOptions {
  Mode mode = Mode::Eval;
  /// Required in Train mode when the network has dropout or noise layers.
  Rng* rng = nullptr;
  /// Candidates wired into the forward pass (gradient-descent dendrites).
  const CandidateBank* candidates = nullptr;
  /// When false, parameter leaves do not require grad (inference only).
  bool track_params = true;
};

struct CandidateTap {
  autodiff::NodeId weight, bias, output, activation;
  std::vector<autodiff::NodeId> prior;
};

/// Nodes recorded for one perforated layer during a forward pass.
struct LayerTap {
  std::size_t layer = 0;
  autodiff::NodeId input;
  autodiff::NodeId preactivation;  // neuron input including dendrite terms
  std::vector<autodiff::NodeId> dendrite_outputs;
  std::vector<CandidateTap> candidates;  // one per pool slot, GD mode only
};

struct Trace {
  autodiff::NodeId input;
  autodiff::NodeId logits;
  std::vector<autodiff::NodeId> params;  // parallel to Network::parameters()
  std::vector<LayerTap> taps;
};

class Network {
 public:
  Network() = default;
  explicit Network(ArchitectureSpec spec) : spec_(std::move(spec)) {}

  const ArchitectureSpec& spec() const { return spec_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }

  /// Throws StateError on a duplicate name.
  std::size_t add_parameter(std::string name, Tensor value, ParamRole role);
  void add_layer(Layer layer) { layers_.push_back(std::move(layer)); }
  const Parameter& parameter(std::string_view name) const;
  std::optional<std::size_t> find_parameter(std::string_view name) const;

  const std::optional<PerforationState>& perforation() const { return perforation_; }
  void set_perforation(PerforationState state) { perforation_ = state; }

  /// Number of output units (dense) or channels (conv) of a weight layer.
  std::size_t neurons(const Layer& layer) const;
  /// Input size seen by one neuron: in-features, or C*kh*kw for conv.
  std::size_t fan_in(const Layer& layer) const;

  Trace forward(autodiff::Tape& tape, const Tensor& batch, const ForwardOptions& options) const;
  /// Eval-mode logits.
  Tensor predict(const Tensor& batch) const;

 private:
  ArchitectureSpec spec_;
  std::vector<Layer> layers_;
  std::vector<Parameter> params_;
  std::optional<PerforationState> perforation_;
};

/// Deterministic in `seed`; weights and biases uniform in +-1/sqrt(fan_in).
/// Throws ConfigError naming the layer if a conv stage would shrink the
/// spatial size below 1.
Network build_network(const ArchitectureSpec& spec, std::uint64_t seed);

/// Sum of all registry tensor sizes, frozen dendrite tensors included.
std::size_t param_count(const Network& net);

/// PKWS binary round trip; bit-exact for all parameters.
void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace pbp
