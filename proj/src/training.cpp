// SPDX-License-Identifier: Apache-2.0
#include "pbp/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pbp/config_json.hpp"
#include "pbp/digest.hpp"
#include "pbp/error.hpp"
#include "pbp/kernels.hpp"

namespace pbp {

using autodiff::NodeId;
using autodiff::Tape;

std::string_view format_name(ModelFormat f) {
  switch (f) {
    case ModelFormat::Traditional: return "traditional";
    case ModelFormat::GD: return "gd";
    case ModelFormat::CC: return "cc";
  }
  return "traditional";
}

ModelFormat parse_format(std::string_view s) {
  for (auto f : {ModelFormat::Traditional, ModelFormat::GD, ModelFormat::CC})
    if (format_name(f) == s) return f;
  throw ConfigError("unknown model format '" + std::string(s) + "'");
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Neuron: return "neuron";
    case Phase::Dendrite: return "dendrite";
    case Phase::Done: return "done";
  }
  return "done";
}

std::string_view event_name(PhaseEvent::Kind k) {
  switch (k) {
    case PhaseEvent::Kind::DendritePhaseStart: return "dendrite_phase_start";
    case PhaseEvent::Kind::SelectAndFreeze: return "select_and_freeze";
    case PhaseEvent::Kind::Stop: return "stop";
  }
  return "stop";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train: learning_rate must be > 0");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (patience == 0) throw ConfigError("train: patience must be >= 1");
  if (!(switch_threshold > 0.0)) throw ConfigError("train: switch_threshold must be > 0");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be >= 1");
  if (max_cycles > 0) {
    if (!dendrite) throw ConfigError("train: max_cycles > 0 needs a dendrite config");
    dendrite->validate();
    if (max_cycles > dendrite->max_dendrites) throw ConfigError("train: max_cycles exceeds dendrite.max_dendrites");
  }
}

ModelFormat TrainConfig::format() const {
  if (max_cycles == 0 || !dendrite) return ModelFormat::Traditional;
  return dendrite->mode == DendriteMode::CC ? ModelFormat::CC : ModelFormat::GD;
}

void PhaseScheduler::enter_dendrite_phase() {
  if (!can_grow()) throw StateError("scheduler: dendrite phase not allowed now");
  phase_ = Phase::Dendrite;
}

void PhaseScheduler::enter_neuron_phase() {
  if (phase_ != Phase::Dendrite) throw StateError("scheduler: not in the dendrite phase");
  phase_ = Phase::Neuron;
  ++cycle_;
}

bool detect_plateau(std::span<const double> history, double threshold, std::size_t patience) {
  if (history.size() <= patience) return false;
  double best = history[0];
  for (std::size_t i = 1; i < history.size() - patience; ++i) best = std::max(best, history[i]);
  for (std::size_t i = history.size() - patience; i < history.size(); ++i) {
    if (history[i] > best && history[i] - best >= threshold * std::abs(best)) return false;
    best = std::max(best, history[i]);
  }
  return true;
}

Standardizer Standardizer::fit(const LabeledDataset& data, Split split) {
  const auto rows = data.indices(split);
  if (rows.empty()) throw ConfigError("standardize: empty split");
  const Shape shape = data.sample_shape();
  const std::size_t d = element_count(shape);
  Standardizer s{Tensor(shape), Tensor(shape)};
  for (auto r : rows)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += data.features[r * d + j];
  for (std::size_t j = 0; j < d; ++j) s.mean[j] /= static_cast<double>(rows.size());
  for (auto r : rows)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = data.features[r * d + j] - s.mean[j];
      s.scale[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(s.scale[j] / static_cast<double>(rows.size()));
    s.scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  return s;
}

Standardizer Standardizer::identity(const Shape& sample_shape) {
  return {Tensor(sample_shape, 0.0), Tensor(sample_shape, 1.0)};
}

Tensor Standardizer::apply(const Tensor& batch) const {
  const std::size_t d = mean.size();
  if (batch.rank() < 1 || batch.size() != batch.dim(0) * d) {
    throw ShapeError("standardize: batch " + shape_string(batch.shape()) + " does not match " +
                     shape_string(mean.shape()));
  }
  Tensor out = batch;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % d]) * scale[i % d];
  return out;
}

ArchitectureSpec fit_to(ArchitectureSpec spec, const LabeledDataset& data) {
  spec.input_shape = data.sample_shape();
  spec.num_classes = data.num_classes();
  return spec;
}

std::vector<std::size_t> predict_classes(const Network& net, const Tensor& batch) {
  const Tensor logits = net.predict(batch);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (logits[i * k + c] > logits[i * k + best]) best = c;
    out[i] = best;
  }
  return out;
}

double evaluate(const Network& net, const Tensor& batch, std::span<const std::size_t> labels) {
  if (labels.empty() || batch.rank() < 1 || batch.dim(0) != labels.size()) {
    throw ConfigError("evaluate: need a non-empty batch with one label per row");
  }
  constexpr std::size_t kChunk = 256;
  const std::size_t n = labels.size(), stride = batch.size() / n;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t len = std::min(kChunk, n - start);
    Shape shape = batch.shape();
    shape[0] = len;
    Tensor chunk(shape, std::vector<double>(batch.raw() + start * stride, batch.raw() + (start + len) * stride));
    const auto pred = predict_classes(net, chunk);
    for (std::size_t i = 0; i < len; ++i) correct += pred[i] == labels[start + i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

namespace {

struct SplitData {
  Tensor x;
  std::vector<std::size_t> y;
};

SplitData take(const LabeledDataset& data, Split split, const Standardizer& s) {
  const auto rows = data.indices(split);
  if (rows.empty()) throw ConfigError("train: dataset has an empty " + std::string(split_name(split)) + " split");
  return {s.apply(data.gather(rows)), data.gather_labels(rows)};
}

Tensor rows_of(const Tensor& x, std::span<const std::size_t> rows) {
  Shape shape = x.shape();
  const std::size_t stride = x.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(std::move(shape));
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(x.raw() + rows[r] * stride, stride, out.raw() + r * stride);
  return out;
}

class Trainer {
 public:
  Trainer(Network& net, const SplitData& train, const TrainConfig& config)
      : net_(net),
        train_(train),
        config_(config),
        shuffle_(derive_seed(config.seed, stream::kShuffle)),
        stochastic_(derive_seed(config.seed, stream::kStochastic)),
        candidates_rng_(derive_seed(config.seed, stream::kCandidates)) {
    order_.resize(train.y.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  Rng& candidate_rng() { return candidates_rng_; }

  /// One SGD epoch over neuron weights and dendrite output weights.
  double neuron_epoch() {
    return for_each_batch([&](Tape& tape, const Trace& trace, const autodiff::Gradients& grads) {
      (void)tape;
      auto& params = net_.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p].frozen()) continue;
        const Tensor* g = grads.find(trace.params[p]);
        if (!g) continue;
        kernels::active().axpy(-config_.learning_rate, g->raw(), params[p].value.raw(), g->size());
        if (!params[p].value.all_finite()) throw NumericalError("sgd: parameter " + params[p].name + " diverged");
      }
    }, nullptr);
  }

  /// One epoch of candidate training; network parameters are untouched.
  double dendrite_epoch(CandidateBank& bank) {
    const DendriteConfig& dc = *config_.dendrite;
    const bool gd = dc.mode == DendriteMode::GD;
    return for_each_batch([&](Tape& tape, const Trace& trace, const autodiff::Gradients& grads) {
      if (gd) {
        gd_train_step(bank, net_, tape, trace, grads, dc, config_.learning_rate);
      } else {
        cc_train_step(bank, net_, tape, trace, grads, dc, config_.learning_rate);
      }
    }, gd ? &bank : nullptr);
  }

 private:
  template <class Step>
  double for_each_batch(Step&& step, const CandidateBank* wired) {
    shuffle_.shuffle(order_);
    double total = 0.0;
    const std::size_t n = order_.size();
    for (std::size_t start = 0; start < n; start += config_.batch_size) {
      const std::size_t len = std::min(config_.batch_size, n - start);
      const std::span<const std::size_t> rows(order_.data() + start, len);
      std::vector<std::size_t> labels(len);
      for (std::size_t i = 0; i < len; ++i) labels[i] = train_.y[rows[i]];
      Tape tape;
      ForwardOptions opts;
      opts.mode = Mode::Train;
      opts.rng = &stochastic_;
      opts.candidates = wired;
      const Trace trace = net_.forward(tape, rows_of(train_.x, rows), opts);
      const NodeId loss = tape.softmax_cross_entropy(trace.logits, labels);
      const auto grads = tape.backward(loss);
      step(tape, trace, grads);
      total += tape.value(loss)[0] * static_cast<double>(len);
    }
    return total / static_cast<double>(n);
  }

  Network& net_;
  const SplitData& train_;
  const TrainConfig& config_;
  Rng shuffle_, stochastic_, candidates_rng_;
  std::vector<std::size_t> order_;
};

}  // namespace

TrialRun train_trial(const ArchitectureSpec& spec, const LabeledDataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  if (spec.input_shape != data.sample_shape() || spec.num_classes != data.num_classes()) {
    throw ConfigError("train: architecture expects input " + shape_string(spec.input_shape) + " with " +
                      std::to_string(spec.num_classes) + " classes; dataset has " +
                      shape_string(data.sample_shape()) + " with " + std::to_string(data.num_classes()));
  }
  TrialRun run;
  TrialResult& r = run.result;
  r.model_format = config.format();
  r.config_digest = config_digest(spec, config);

  run.standardizer =
      config.standardize ? Standardizer::fit(data, Split::Train) : Standardizer::identity(data.sample_shape());
  const SplitData train = take(data, Split::Train, run.standardizer);
  const SplitData val = take(data, Split::Val, run.standardizer);
  const SplitData test = take(data, Split::Test, run.standardizer);

  Network net = build_network(spec, config.seed);
  if (r.model_format != ModelFormat::Traditional) perforate(net, *config.dendrite);
  Network best = net;
  double best_val = -1.0;
  double last_val = 0.0;
  std::size_t epoch = 0;
  PhaseScheduler scheduler(r.model_format == ModelFormat::Traditional ? 0 : config.max_cycles);
  Trainer trainer(net, train, config);
  const double thr = config.switch_threshold;
  // A uniform predictor scores ln(K); a thousand times that is not training.
  const double divergence_loss = 1000.0 * std::log(static_cast<double>(spec.num_classes));

  auto stop = [&](std::string why) {
    r.events.push_back({epoch, PhaseEvent::Kind::Stop, std::move(why)});
    scheduler.finish();
  };

  try {
    while (scheduler.phase() != Phase::Done) {
      std::vector<double> val_series;
      while (epoch < config.max_epochs) {
        const double loss = trainer.neuron_epoch();
        if (!std::isfinite(loss) || loss > divergence_loss) {
          throw NumericalError("training loss diverged (epoch " + std::to_string(epoch + 1) + " mean " +
                               std::to_string(loss) + ")");
        }
        last_val = evaluate(net, val.x, val.y);
        ++epoch;
        r.history.push_back({epoch, Phase::Neuron, scheduler.cycle(), loss, last_val, last_val});
        if (last_val > best_val) {
          best_val = last_val;
          best = net;
          r.best_epoch = epoch;
          r.checkpoint_digest = parameter_digest(net);
        }
        val_series.push_back(last_val);
        if (detect_plateau(val_series, thr, config.patience)) break;
      }
      const double before = r.best_val_by_cycle.empty() ? 0.0 : r.best_val_by_cycle.back();
      r.best_val_by_cycle.push_back(best_val);

      if (scheduler.cycle() > 0 && !(best_val > before && best_val - before >= thr * std::abs(before))) {
        stop("dendrite cycle did not improve validation accuracy");
      } else if (epoch >= config.max_epochs) {
        stop("epoch budget exhausted");
      } else if (!scheduler.can_grow()) {
        stop(scheduler.cycle() == 0 ? "neuron phase plateau" : "cycle budget exhausted");
      } else {
        scheduler.enter_dendrite_phase();
        const DendriteConfig& dc = *config.dendrite;
        r.events.push_back({epoch, PhaseEvent::Kind::DendritePhaseStart, "cycle " + std::to_string(scheduler.cycle())});
        DigestPair digests{parameter_digest(net), {}};
        CandidateBank bank = make_candidates(net, dc, trainer.candidate_rng());
        std::vector<double> corr_series;
        while (epoch < config.max_epochs) {
          const double loss = trainer.dendrite_epoch(bank);
          const double corr = bank.mean_abs_correlation();
          ++epoch;
          r.history.push_back({epoch, Phase::Dendrite, scheduler.cycle(), loss, last_val, corr});
          corr_series.push_back(corr);
          if (detect_plateau(corr_series, thr, config.patience)) break;
        }
        digests.exit = parameter_digest(net);
        r.dendrite_phase_digests.push_back(std::move(digests));
        select_and_freeze(net, bank, dc);
        r.events.push_back({epoch, PhaseEvent::Kind::SelectAndFreeze, "levels " + std::to_string(dendrite_levels(net))});
        scheduler.enter_neuron_phase();
        r.cycles_completed = scheduler.cycle();
        if (epoch >= config.max_epochs) {
          // The grown model never trained; it cannot beat the checkpoint.
          stop("epoch budget exhausted");
        }
      }
    }
  } catch (const NumericalError& e) {
    r.status = TrialStatus::Failed;
    r.reason = e.what();
    r.epochs_run = epoch;
    r.param_count = param_count(net);
    run.model = std::move(net);
    return run;
  }

  r.epochs_run = epoch;
  r.val_accuracy_at_best = best_val;
  run.model = std::move(best);
  r.evaluated_digest = parameter_digest(run.model);
  r.test_accuracy = evaluate(run.model, test.x, test.y);
  r.param_count = param_count(run.model);
  return run;
}

}  // namespace pbp
