// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbp/sweep.hpp"

namespace pbp {

struct FrontierPoint {
  std::size_t param_count = 0;
  double test_accuracy = 0.0;
  std::size_t trial_index = 0;
  ModelFormat model_format = ModelFormat::Traditional;
};

/// Ok records not dominated under (fewer params, higher accuracy), sorted by
/// param_count; exact duplicates keep the lowest trial_index. Throws
/// ConfigError when there is no Ok record.
std::vector<FrontierPoint> pareto_frontier(std::span<const TrialRecord> records);

enum class Winner : std::uint8_t { None, Dendritic, Traditional, Tie };
std::string_view winner_name(Winner w);

struct AccuracyRow {
  double threshold = 0.0;
  /// Fewest parameters among Ok records reaching the threshold.
  std::optional<std::size_t> min_params;
  std::optional<std::size_t> trial_index;  // lowest index achieving min_params
  std::optional<ModelFormat> model_format;
  Winner winner = Winner::None;
};

struct BudgetRow {
  double budget = 0.0;
  /// Best accuracy among Ok records with param_count <= budget.
  std::optional<double> max_accuracy;
  std::optional<std::size_t> trial_index;
  std::optional<ModelFormat> model_format;
  Winner winner = Winner::None;
};

struct DominanceReport {
  std::vector<AccuracyRow> accuracy;
  std::vector<BudgetRow> budget;
  bool dendritic_at_all_thresholds = false;
  bool dendritic_at_all_budgets = false;
  /// Both of the above.
  bool dendritic_dominates = false;
};

/// Thresholds k*step for k = 0..round(1/step); budgets 10^(e + i/per_decade)
/// spanning the observed parameter counts. A row's winner is the family of
/// every record attaining its optimum (Tie if both families do). The summary
/// flags are true iff every occupied row is won by dendritic models.
DominanceReport dominance_report(std::span<const TrialRecord> records, double step = 0.01,
                                 std::size_t per_decade = 10);

/// Writes <prefix>_frontier.csv, _dominance_accuracy.csv,
/// _dominance_budget.csv, _dominance_summary.csv and _plot.csv.
/// Throws ConfigError when there is no Ok record, IoError on write failure.
void write_pareto_outputs(std::span<const TrialRecord> records, const std::string& prefix);

}  // namespace pbp
