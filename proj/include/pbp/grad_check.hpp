// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pbp/layers.hpp"
#include "pbp/tape.hpp"

namespace pbp {

struct GradCheckReport {
  /// max |analytic - numeric| / (|numeric| + 1e-12)
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  /// Entries whose +-epsilon probes landed on different sides of a ReLU or
  /// max-pool kink. The one-sided slopes differ there, so central
  /// differences measure neither; these are counted but not compared.
  std::size_t kinks_skipped = 0;
  /// "name[flat index]" of the worst entry.
  std::string worst;
};

inline constexpr std::size_t kGradCheckMaxParams = 10000;

/// Central differences against backward() for every trainable entry of
/// `model` (frozen dendrite tensors are skipped: their task-loss gradient is
/// zero by construction). The loss is mean softmax cross-entropy of
/// `labels`. Stochastic layers replay the same mask on every evaluation.
/// Throws ConfigError on the parameter-count guard or epsilon outside
/// (0, 1e-2], NumericalError on a non-finite loss.
GradCheckReport grad_check(const Network& model, const Tensor& batch, std::span<const std::size_t> labels,
                           double epsilon, Mode mode = Mode::Train, std::uint64_t seed = 0);

/// Builds a scalar loss from leaves created for `inputs` (in order).
using LossBuilder = std::function<autodiff::NodeId(autodiff::Tape&, std::span<const autodiff::NodeId>)>;

/// Same comparison for an arbitrary tape expression, over every input entry.
GradCheckReport grad_check(const LossBuilder& build, std::vector<Tensor> inputs, double epsilon);

}  // namespace pbp
