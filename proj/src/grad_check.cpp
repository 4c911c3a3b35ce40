// SPDX-License-Identifier: Apache-2.0
#include "pbp/grad_check.hpp"

#include <cmath>

#include "pbp/error.hpp"

namespace pbp {

using autodiff::NodeId;
using autodiff::Tape;

namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw ConfigError("grad_check: epsilon must be in (0, 1e-2]");
}

struct Probe {
  double loss = 0.0;
  std::vector<std::uint32_t> branches;
};

Probe probe(const Tape& tape, NodeId loss) {
  const double v = tape.value(loss)[0];
  if (!std::isfinite(v)) throw NumericalError("grad_check: loss is not finite");
  return {v, tape.branch_signature()};
}

// Perturbs every entry of `value` in turn and folds the comparison into `report`.
template <class Loss>
void compare(GradCheckReport& report, const std::string& name, Tensor& value, const Tensor& analytic,
             const std::vector<std::uint32_t>& branches, double epsilon, Loss&& loss) {
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double saved = value[i];
    value[i] = saved + epsilon;
    const Probe up = loss();
    value[i] = saved - epsilon;
    const Probe down = loss();
    value[i] = saved;
    if (up.branches != branches || down.branches != branches) {
      ++report.kinks_skipped;
      continue;
    }
    const double numeric = (up.loss - down.loss) / (2.0 * epsilon);
    const double abs_err = std::abs(analytic[i] - numeric);
    const double rel = abs_err / (std::abs(numeric) + 1e-12);
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (report.checked == 0 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst = name + "[" + std::to_string(i) + "]";
    }
    ++report.checked;
  }
}

}  // namespace

GradCheckReport grad_check(const Network& model, const Tensor& batch, std::span<const std::size_t> labels,
                           double epsilon, Mode mode, std::uint64_t seed) {
  check_epsilon(epsilon);
  if (param_count(model) > kGradCheckMaxParams) {
    throw ConfigError("grad_check: model has " + std::to_string(param_count(model)) + " parameters (limit " +
                      std::to_string(kGradCheckMaxParams) + ")");
  }
  Network net = model;
  auto run = [&](Tape& tape) {
    Rng rng(seed);
    ForwardOptions opts;
    opts.mode = mode;
    opts.rng = &rng;
    Trace trace = net.forward(tape, batch, opts);
    const NodeId loss = tape.softmax_cross_entropy(trace.logits, labels);
    return std::pair{trace, loss};
  };

  Tape tape;
  const auto [trace, loss] = run(tape);
  const auto branches = probe(tape, loss).branches;
  const auto grads = tape.backward(loss);

  auto loss_only = [&] {
    Tape t;
    const auto [tr, l] = run(t);
    return probe(t, l);
  };

  GradCheckReport report;
  for (std::size_t p = 0; p < net.parameters().size(); ++p) {
    auto& param = net.parameters()[p];
    if (param.frozen()) continue;
    compare(report, param.name, param.value, grads.get(trace.params[p]), branches, epsilon, loss_only);
  }
  return report;
}

GradCheckReport grad_check(const LossBuilder& build, std::vector<Tensor> inputs, double epsilon) {
  check_epsilon(epsilon);
  auto run = [&](Tape& tape, std::vector<NodeId>& ids) {
    ids.clear();
    for (const auto& t : inputs) ids.push_back(tape.leaf(t));
    return build(tape, ids);
  };
  Tape tape;
  std::vector<NodeId> ids;
  const NodeId loss = run(tape, ids);
  if (tape.value(loss).size() != 1) throw ShapeError("grad_check: loss must be a scalar");
  const auto branches = probe(tape, loss).branches;
  const auto grads = tape.backward(loss);

  auto loss_only = [&] {
    Tape t;
    std::vector<NodeId> scratch;
    const NodeId l = run(t, scratch);
    return probe(t, l);
  };

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    compare(report, "input" + std::to_string(i), inputs[i], grads.get(ids[i]), branches, epsilon, loss_only);
  }
  return report;
}

}  // namespace pbp
