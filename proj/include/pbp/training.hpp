// SPDX-License-Identifier: Apache-2.0
#pragma once

// Alternating neuron/dendrite training of one trial.
//
// Neuron phase: plain SGD on neuron weights and dendrite output weights until
// validation accuracy plateaus. Dendrite phase: neuron weights are fixed
// while a fresh candidate pool learns (by correlation or by gradient) until
// mean |corr| plateaus; the best candidate per neuron is then frozen in and
// the neuron phase resumes. Training stops when a cycle fails to lift the
// best validation accuracy by switch_threshold (relative), or on budget.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbp/data.hpp"
#include "pbp/layers.hpp"
#include "pbp/perforation.hpp"

namespace pbp {

enum class ModelFormat : std::uint8_t { Traditional, GD, CC };
std::string_view format_name(ModelFormat f);
/// Throws ConfigError on an unknown name.
ModelFormat parse_format(std::string_view s);

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  std::size_t patience = 5;
  double switch_threshold = 0.01;
  std::size_t max_cycles = 0;  // 0 = traditional
  std::size_t max_epochs = 200;
  std::uint64_t seed = 0;
  std::optional<DendriteConfig> dendrite;
  /// Per-feature standardisation with train-split statistics.
  bool standardize = true;

  /// Throws ConfigError.
  void validate() const;
  ModelFormat format() const;
};

enum class Phase : std::uint8_t { Neuron, Dendrite, Done };
std::string_view phase_name(Phase p);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  Phase phase = Phase::Neuron;
  std::size_t cycle = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;  // of the deployable model (unchanged during dendrite phases)
  double metric = 0.0;        // val accuracy (neuron) or mean |corr| (dendrite)
};

struct PhaseEvent {
  enum class Kind : std::uint8_t { DendritePhaseStart, SelectAndFreeze, Stop };
  std::size_t after_epoch = 0;
  Kind kind = Kind::Stop;
  std::string detail;
};
std::string_view event_name(PhaseEvent::Kind k);

/// Phase state machine: Neuron -> Dendrite -> Neuron ... -> Done.
class PhaseScheduler {
 public:
  explicit PhaseScheduler(std::size_t max_cycles) : max_cycles_(max_cycles) {}

  Phase phase() const { return phase_; }
  std::size_t cycle() const { return cycle_; }
  bool can_grow() const { return phase_ == Phase::Neuron && cycle_ < max_cycles_; }

  /// Throws StateError unless can_grow().
  void enter_dendrite_phase();
  /// Throws StateError unless in the dendrite phase; counts the cycle.
  void enter_neuron_phase();
  void finish() { phase_ = Phase::Done; }

 private:
  Phase phase_ = Phase::Neuron;
  std::size_t cycle_ = 0;
  std::size_t max_cycles_;
};

/// True iff the series is longer than `patience` and none of its last
/// `patience` entries beat the best value before it by at least
/// threshold * |best| (relative improvement).
bool detect_plateau(std::span<const double> history, double threshold, std::size_t patience);

enum class TrialStatus : std::uint8_t { Ok, Failed };

struct DigestPair {
  std::string entry;
  std::string exit;
};

struct TrialResult {
  TrialStatus status = TrialStatus::Ok;
  std::string reason;
  double test_accuracy = 0.0;
  double val_accuracy_at_best = 0.0;
  std::size_t param_count = 0;
  ModelFormat model_format = ModelFormat::Traditional;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::size_t cycles_completed = 0;
  std::string config_digest;
  /// parameter_digest of the best-validation checkpoint, and of the model
  /// test accuracy was measured on.
  std::string checkpoint_digest;
  std::string evaluated_digest;
  /// Best validation accuracy at the end of each neuron phase.
  std::vector<double> best_val_by_cycle;
  /// parameter_digest at entry and exit of each dendrite phase.
  std::vector<DigestPair> dendrite_phase_digests;
  std::vector<EpochRecord> history;
  std::vector<PhaseEvent> events;
};

/// Train-split feature statistics; apply() maps raw features to model inputs.
struct Standardizer {
  Tensor mean;   // sample shape
  Tensor scale;  // sample shape, 1/std (1 where std is ~0)

  static Standardizer fit(const LabeledDataset& data, Split split);
  static Standardizer identity(const Shape& sample_shape);
  Tensor apply(const Tensor& batch) const;
};

struct TrialRun {
  TrialResult result;
  /// Best-validation checkpoint (the model that was tested).
  Network model;
  Standardizer standardizer;
};

/// Input shape and class count taken from the dataset.
ArchitectureSpec fit_to(ArchitectureSpec spec, const LabeledDataset& data);

/// One full trial; deterministic in config.seed. Divergence (a non-finite
/// value, or an epoch's mean training loss above 1000 ln K) yields status
/// Failed with a reason rather than an exception. Throws ConfigError
/// on invalid configs or a dataset without all three splits.
TrialRun train_trial(const ArchitectureSpec& spec, const LabeledDataset& data, const TrainConfig& config);

/// Argmax class per row, lowest index on ties.
std::vector<std::size_t> predict_classes(const Network& net, const Tensor& batch);
/// Eval-mode accuracy. Throws ConfigError on an empty batch.
double evaluate(const Network& net, const Tensor& batch, std::span<const std::size_t> labels);

}  // namespace pbp
