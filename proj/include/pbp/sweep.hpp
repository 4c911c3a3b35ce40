// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pbp/data.hpp"
#include "pbp/layers.hpp"
#include "pbp/training.hpp"

namespace pbp {

/// Random-search space. Discrete dimensions are choice lists, continuous
/// ones closed ranges; learning_rate is log-uniform.
struct SweepSpace {
  std::vector<std::size_t> conv_layers{0, 1, 2, 3};
  std::vector<std::size_t> linear_layers{1, 2, 3};
  std::vector<std::size_t> base_width{4, 8, 16, 32};
  std::vector<GrowthMode> growth_mode{GrowthMode::Uniform, GrowthMode::Doubling};
  double dropout_min = 0.0, dropout_max = 0.5;
  double noise_min = 0.0, noise_max = 0.3;
  double lr_min = 1e-4, lr_max = 1e-1;
  std::size_t patience_min = 3, patience_max = 10;
  std::size_t max_dendrites_min = 1, max_dendrites_max = 4;
  double switch_threshold_min = 1e-3, switch_threshold_max = 5e-2;
  double init_magnitude_min = 1e-3, init_magnitude_max = 1e-1;
  std::vector<DendriteFunction> forward_fn{DendriteFunction::Tanh, DendriteFunction::Relu, DendriteFunction::Sigmoid};
  std::vector<PerforateTarget> perforate_target{PerforateTarget::LinearOnly, PerforateTarget::LinearAndConv};
  std::vector<ModelFormat> model_format{ModelFormat::Traditional, ModelFormat::GD, ModelFormat::CC};

  // Held fixed across the sweep.
  std::size_t batch_size = 16;
  std::size_t max_epochs = 60;
  std::size_t candidate_pool = 4;
  double ema_decay = 0.99;
  bool eq4_literal = false;

  /// Throws ConfigError on empty choice lists or inverted ranges.
  void validate() const;
  /// Drops conv_layers choices that the input cannot take (flat inputs get 0
  /// only). Throws ConfigError if nothing is left.
  SweepSpace fitted_to(const Shape& input_shape) const;
};

struct TrialConfig {
  std::size_t trial_index = 0;
  ModelFormat model_format = ModelFormat::Traditional;
  ArchitectureSpec arch;  // input_shape / num_classes filled in by the caller
  TrainConfig train;
};

/// Deterministic in (sweep_seed, trial_index). Every dimension is drawn in a
/// fixed order whatever the format; dendritic fields are then discarded for
/// Traditional trials.
TrialConfig sample_config(const SweepSpace& space, std::uint64_t sweep_seed, std::size_t trial_index);

struct TrialRecord {
  std::size_t trial_index = 0;
  ModelFormat model_format = ModelFormat::Traditional;
  std::size_t conv_layers = 0, linear_layers = 1, base_width = 1;
  GrowthMode growth_mode = GrowthMode::Uniform;
  double dropout = 0.0, noise_std = 0.0, learning_rate = 0.0;
  std::size_t patience = 0;
  std::optional<std::size_t> max_dendrites;
  double switch_threshold = 0.0;
  std::optional<double> init_magnitude;
  std::optional<DendriteFunction> forward_fn;
  std::optional<PerforateTarget> perforate_target;
  std::size_t param_count = 0;
  double test_accuracy = 0.0;
  TrialStatus status = TrialStatus::Ok;
  double wall_time_s = 0.0;
  std::string reason;

  bool ok() const { return status == TrialStatus::Ok; }
  bool dendritic() const { return model_format != ModelFormat::Traditional; }
};

TrialRecord make_record(const TrialConfig& config, const TrialResult& result, double wall_time_s);

std::string_view results_csv_header();
std::string to_csv_row(const TrialRecord& r);
/// Throws ConfigError naming `line_number` on malformed input.
TrialRecord parse_csv_row(std::string_view line, std::size_t line_number);
/// Throws IoError if unreadable, ConfigError on a bad header or row.
std::vector<TrialRecord> read_results_csv(const std::filesystem::path& path);

/// Records as CSV rows with wall_time_s blanked, sorted: equal iff two runs
/// produced the same results in any order.
std::vector<std::string> canonical_rows(std::span<const TrialRecord> records);

struct SweepOptions {
  std::size_t parallelism = 1;
  /// Replace the sampled learning rate of specific trials.
  std::map<std::size_t, double> learning_rate_overrides;
  /// Stop after this many newly completed trials (simulates an interrupted run).
  std::optional<std::size_t> stop_after;
  /// Called under the writer lock after each row is flushed.
  std::function<void(const TrialRecord&, std::size_t done, std::size_t total)> on_trial;
};

/// Runs trials [0, n_trials) on a worker pool, appending one CSV row per
/// finished trial. An existing file at out_path is resumed: its completed
/// trial indices are skipped and a torn last line is dropped. Returns every
/// record in the file afterwards, ordered by trial index. Throws IoError if
/// out_path cannot be written (before any trial runs).
std::vector<TrialRecord> run_sweep(const SweepSpace& space, std::uint64_t sweep_seed, std::size_t n_trials,
                                   const LabeledDataset& data, const std::filesystem::path& out_path,
                                   const SweepOptions& options = {});

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace pbp
