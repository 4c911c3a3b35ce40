// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command-line front end. Exit codes: 0 ok, 1 I/O, 2 config or parse
// error, 3 numerical failure.

#include <iosfwd>
#include <string>
#include <vector>

#include "pbp/config_json.hpp"

namespace pbp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

struct DataConfig {
  std::string kind = "spirals";
  std::size_t n_per_class = 97;
  std::size_t classes = 4;    // keywords only
  double noise_level = 0.3;   // keywords: uniform noise amplitude
  double noise_std = 0.05;    // spirals: Gaussian jitter
  std::uint64_t seed = 0;
  SplitRatios split;
  MfccConfig mfcc;
};

struct SweepConfig {
  std::size_t n_trials = 12;
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  SweepSpace space;
};

struct GradCheckConfig {
  ArchitectureSpec architecture{.conv_layers = 2,
                                .linear_layers = 2,
                                .base_width = 4,
                                .growth_mode = GrowthMode::Uniform,
                                .dropout_rate = 0.0,
                                .noise_std = 0.0,
                                .input_shape = {1, 13, 49},
                                .num_classes = 4};
  std::size_t batch_size = 4;
  double epsilon = 1e-5;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
};

/// Everything a run can be configured with; one JSON object with sections
/// data, architecture, train, sweep, grad_check.
struct CliConfig {
  DataConfig data;
  ArchitectureSpec architecture{.linear_layers = 3};
  TrainConfig train;
  SweepConfig sweep;
  GradCheckConfig grad_check;
};

Json to_json(const CliConfig& c);
/// Throws ConfigError on unknown keys or bad values.
CliConfig config_from_json(const Json& j, CliConfig defaults = {});
/// Throws IoError if unreadable, ConfigError if not valid JSON.
CliConfig load_config(const std::string& path);

/// Parses argv and runs the chosen subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pbp::cli
