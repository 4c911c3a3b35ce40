// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dendrite nodes. Each perforated layer gives every neuron (dense unit or
// conv output channel) a stack of frozen dendrites whose outputs are added to
// the neuron's pre-activation through trainable output weights. The edge from
// that product back into the dendrite is blocked on the tape, so task-loss
// error never flows into a dendrite or past it to earlier layers.
//
// New dendrites are grown in the dendrite phase from a pool of candidates per
// neuron. CC candidates are trained to maximise the covariance between their
// activation g and the neuron's error delta:
//
//   err_k  = (g - avg_g) * (delta - avg_delta)
//   dw_j   = lr * sign(corr) * (delta - avg_delta) * g'(in_k) * x_j
//
// with exponential running averages, the x_j factor optional (eq4_literal
// drops it). GD candidates instead hang off a temporary output connection and
// follow the task-loss gradient. Either way the best candidate per neuron is
// frozen into a new dendrite.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pbp/layers.hpp"
#include "pbp/tape.hpp"

namespace pbp {

enum class DendriteMode : std::uint8_t { CC, GD };

struct DendriteConfig {
  std::size_t max_dendrites = 1;
  std::size_t candidate_pool = 4;
  double init_magnitude = 0.01;
  DendriteFunction forward_fn = DendriteFunction::Tanh;
  DendriteMode mode = DendriteMode::CC;
  PerforateTarget perforate_target = PerforateTarget::LinearOnly;
  double ema_decay = 0.99;
  /// Drop the presynaptic x_j factor from the candidate update.
  bool eq4_literal = false;

  void validate() const;
};

double dendrite_activation(DendriteFunction fn, double pre);
/// Derivative of dendrite_activation at `pre`.
double dendrite_slope(DendriteFunction fn, double pre);

struct DendriteCandidate {
  std::vector<double> weights;  // one per input of the neuron's receptive field
  std::vector<double> prior;    // one per frozen dendrite already on the neuron
  double bias = 0.0;
  double output = 0.0;  // temporary output weight (GD only)

  double avg_activation = 0.0;
  double avg_error = 0.0;
  double corr_ema = 0.0;
  int sigma = 1;
  std::size_t updates = 0;
};

/// (g - avg_g) * (delta - avg_delta)
double dendrite_error(double g, double avg_g, double delta, double avg_delta);

/// Folds one mini-batch into the running averages. The first call
/// initialises avg_activation and avg_error to the batch means and corr_ema
/// to the batch covariance; later calls use the previous averages for the
/// covariance term and then decay all three. sigma follows sign(corr_ema),
/// +1 at exactly zero.
void update_statistics(DendriteCandidate& c, std::span<const double> activations, std::span<const double> errors,
                       double ema_decay);

/// One mini-batch of inputs as seen by the candidates of a single neuron.
struct CandidateBatch {
  std::span<const double> inputs;  // samples x fan_in, row-major
  std::size_t samples = 0;
  std::size_t fan_in = 0;
  std::vector<std::span<const double>> prior_outputs;  // per frozen dendrite, length samples
};

void candidate_preactivation(const DendriteCandidate& c, const CandidateBatch& batch, std::span<double> out);

/// Correlation-ascent step averaged over the batch, applied once. Requires
/// at least one prior update_statistics call. Throws NumericalError if any
/// weight becomes non-finite.
void dendrite_weight_update(DendriteCandidate& c, const CandidateBatch& batch, std::span<const double> slopes,
                            std::span<const double> errors, double lr, bool eq4_literal = false);

/// Candidates for every neuron of one perforated layer.
class CandidatePool {
 public:
  CandidatePool(std::size_t layer, std::size_t neurons, std::size_t pool_size, std::size_t fan_in, std::size_t levels)
      : layer_(layer), neurons_(neurons), pool_size_(pool_size), fan_in_(fan_in), levels_(levels),
        candidates_(neurons * pool_size) {}

  std::size_t layer() const { return layer_; }
  std::size_t neurons() const { return neurons_; }
  std::size_t pool_size() const { return pool_size_; }
  std::size_t fan_in() const { return fan_in_; }
  /// Frozen dendrites per neuron when the pool was created.
  std::size_t levels() const { return levels_; }

  DendriteCandidate& at(std::size_t neuron, std::size_t slot) { return candidates_[neuron * pool_size_ + slot]; }
  const DendriteCandidate& at(std::size_t neuron, std::size_t slot) const {
    return candidates_[neuron * pool_size_ + slot];
  }
  std::span<DendriteCandidate> all() { return candidates_; }
  std::span<const DendriteCandidate> all() const { return candidates_; }

  /// Index of the slot with the largest |corr_ema| for a neuron, lowest on ties.
  std::size_t winner(std::size_t neuron) const;
  double mean_abs_correlation() const;

 private:
  std::size_t layer_, neurons_, pool_size_, fan_in_, levels_;
  std::vector<DendriteCandidate> candidates_;
};

class CandidateBank {
 public:
  std::vector<CandidatePool>& pools() { return pools_; }
  const std::vector<CandidatePool>& pools() const { return pools_; }
  const CandidatePool* find(std::size_t layer) const;
  CandidatePool* find(std::size_t layer);
  /// Mean |corr_ema| over every candidate in every pool.
  double mean_abs_correlation() const;

 private:
  std::vector<CandidatePool> pools_;
};

/// Marks target layers as perforated (dense always, conv with LinearAndConv).
/// The forward pass is unchanged until dendrites are frozen in.
/// Throws StateError if already perforated or nothing matches the target.
void perforate(Network& net, const DendriteConfig& config);

/// Fresh candidates for every perforated layer, weights uniform in
/// +-1/sqrt(fan_in). GD candidates start with output weight init_magnitude.
CandidateBank make_candidates(const Network& net, const DendriteConfig& config, Rng& rng);

/// Per-neuron view of one perforated layer for the current mini-batch.
struct LayerBatch {
  std::vector<double> inputs;  // samples x fan_in
  std::size_t samples = 0;
  std::size_t fan_in = 0;
  std::vector<std::vector<double>> errors;                // [neuron][sample], per-sample deltas
  std::vector<std::vector<std::vector<double>>> priors;   // [neuron][level][sample]

  CandidateBatch view(std::size_t neuron) const;
};

/// Gathers patches, neuron deltas and frozen-dendrite outputs for one layer.
/// Deltas are gradients of the summed (not batch-mean) loss.
LayerBatch gather_layer_batch(const Network& net, const autodiff::Tape& tape, const LayerTap& tap,
                              const autodiff::Gradients& grads);

/// Cascade-correlation update of every candidate in the bank for one mini-batch.
void cc_train_step(CandidateBank& bank, const Network& net, const autodiff::Tape& tape, const Trace& trace,
                   const autodiff::Gradients& grads, const DendriteConfig& config, double lr);

/// Task-loss gradient step on one layer's GD candidates (weights, bias, cascade
/// weights and temporary output weight). Throws StateError in CC mode.
void gd_dendrite_step(CandidatePool& pool, const Network& net, const LayerTap& tap, const autodiff::Gradients& grads,
                      const DendriteConfig& config, double lr);

/// Statistics update plus gd_dendrite_step for every pool.
void gd_train_step(CandidateBank& bank, const Network& net, const autodiff::Tape& tape, const Trace& trace,
                   const autodiff::Gradients& grads, const DendriteConfig& config, double lr);

/// Freezes the best candidate of every neuron into a new dendrite level with
/// output weight -sigma * init_magnitude. Throws StateError when the layer
/// already holds max_dendrites levels or a neuron has no trained candidate.
void select_and_freeze(Network& net, const CandidatePool& pool, const DendriteConfig& config);
void select_and_freeze(Network& net, const CandidateBank& bank, const DendriteConfig& config);

/// Frozen dendrite count per neuron (same for all neurons of a layer), max over layers.
std::size_t dendrite_levels(const Network& net);

namespace detail {
/// Pre-activation of a perforated layer including frozen dendrites and any
/// GD candidates; used by Network::forward.
autodiff::NodeId perforated_preactivation(autodiff::Tape& tape, const Network& net, std::size_t layer_index,
                                          autodiff::NodeId input, const Trace& trace, const ForwardOptions& options,
                                          LayerTap& tap);
}  // namespace detail

}  // namespace pbp
