// SPDX-License-Identifier: Apache-2.0
#include "pbp/perforation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pbp/conv.hpp"
#include "pbp/error.hpp"
#include "pbp/kernels.hpp"

namespace pbp {

using autodiff::Gradients;
using autodiff::NodeId;
using autodiff::Tape;

void DendriteConfig::validate() const {
  if (max_dendrites < 1) throw ConfigError("dendrite: max_dendrites must be >= 1");
  if (candidate_pool < 1) throw ConfigError("dendrite: candidate_pool must be >= 1");
  if (!(init_magnitude >= 0.0) || !std::isfinite(init_magnitude)) {
    throw ConfigError("dendrite: init_magnitude must be finite and >= 0");
  }
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("dendrite: ema_decay must be in (0,1)");
}

double dendrite_activation(DendriteFunction fn, double pre) {
  switch (fn) {
    case DendriteFunction::Tanh: return std::tanh(pre);
    case DendriteFunction::Relu: return pre > 0.0 ? pre : 0.0;
    case DendriteFunction::Sigmoid: return 1.0 / (1.0 + std::exp(-pre));
  }
  return 0.0;
}

double dendrite_slope(DendriteFunction fn, double pre) {
  switch (fn) {
    case DendriteFunction::Tanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case DendriteFunction::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case DendriteFunction::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-pre));
      return s * (1.0 - s);
    }
  }
  return 0.0;
}

double dendrite_error(double g, double avg_g, double delta, double avg_delta) {
  return (g - avg_g) * (delta - avg_delta);
}

namespace {

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

void update_statistics(DendriteCandidate& c, std::span<const double> activations, std::span<const double> errors,
                       double ema_decay) {
  if (activations.empty() || activations.size() != errors.size()) {
    throw ShapeError("update_statistics: need equal, non-empty activation and error batches");
  }
  const double mean_g = mean(activations);
  const double mean_delta = mean(errors);
  if (c.updates == 0) {
    c.avg_activation = mean_g;
    c.avg_error = mean_delta;
  }
  double cov = 0.0;
  for (std::size_t s = 0; s < activations.size(); ++s) {
    cov += dendrite_error(activations[s], c.avg_activation, errors[s], c.avg_error);
  }
  cov /= static_cast<double>(activations.size());
  if (c.updates == 0) {
    c.corr_ema = cov;
  } else {
    const double keep = ema_decay, take = 1.0 - ema_decay;
    c.corr_ema = keep * c.corr_ema + take * cov;
    c.avg_activation = keep * c.avg_activation + take * mean_g;
    c.avg_error = keep * c.avg_error + take * mean_delta;
  }
  c.sigma = c.corr_ema < 0.0 ? -1 : 1;
  ++c.updates;
}

void candidate_preactivation(const DendriteCandidate& c, const CandidateBatch& batch, std::span<double> out) {
  if (c.weights.size() != batch.fan_in || c.prior.size() != batch.prior_outputs.size() ||
      out.size() != batch.samples || batch.inputs.size() != batch.samples * batch.fan_in) {
    throw ShapeError("candidate_preactivation: candidate and batch dimensions disagree");
  }
  const auto& k = kernels::active();
  for (std::size_t s = 0; s < batch.samples; ++s) {
    double v = k.dot(batch.inputs.data() + s * batch.fan_in, c.weights.data(), batch.fan_in) + c.bias;
    for (std::size_t d = 0; d < c.prior.size(); ++d) v += c.prior[d] * batch.prior_outputs[d][s];
    out[s] = v;
  }
}

void dendrite_weight_update(DendriteCandidate& c, const CandidateBatch& batch, std::span<const double> slopes,
                            std::span<const double> errors, double lr, bool eq4_literal) {
  if (c.updates == 0) throw StateError("dendrite_weight_update: statistics not initialised");
  if (slopes.size() != batch.samples || errors.size() != batch.samples || c.weights.size() != batch.fan_in ||
      c.prior.size() != batch.prior_outputs.size()) {
    throw ShapeError("dendrite_weight_update: candidate and batch dimensions disagree");
  }
  const auto& k = kernels::active();
  std::vector<double> grad_w(batch.fan_in, 0.0);
  std::vector<double> grad_prior(c.prior.size(), 0.0);
  double grad_b = 0.0;
  double grad_all = 0.0;  // eq4_literal: the same term for every input weight
  for (std::size_t s = 0; s < batch.samples; ++s) {
    const double e = c.sigma * (errors[s] - c.avg_error) * slopes[s];
    grad_b += e;
    if (eq4_literal) {
      grad_all += e;
      for (auto& g : grad_prior) g += e;
    } else {
      k.axpy(e, batch.inputs.data() + s * batch.fan_in, grad_w.data(), batch.fan_in);
      for (std::size_t d = 0; d < grad_prior.size(); ++d) grad_prior[d] += e * batch.prior_outputs[d][s];
    }
  }
  const double step = lr / static_cast<double>(batch.samples);
  if (eq4_literal) std::fill(grad_w.begin(), grad_w.end(), grad_all);
  k.axpy(step, grad_w.data(), c.weights.data(), grad_w.size());
  for (std::size_t d = 0; d < grad_prior.size(); ++d) c.prior[d] += step * grad_prior[d];
  c.bias += step * grad_b;

  const auto finite = [](double v) { return std::isfinite(v); };
  if (!std::isfinite(c.bias) || !std::all_of(c.weights.begin(), c.weights.end(), finite) ||
      !std::all_of(c.prior.begin(), c.prior.end(), finite)) {
    throw NumericalError("dendrite_weight_update: candidate weights diverged (learning rate too large?)");
  }
}

std::size_t CandidatePool::winner(std::size_t neuron) const {
  std::size_t best = pool_size_;
  for (std::size_t p = 0; p < pool_size_; ++p) {
    const auto& c = at(neuron, p);
    if (c.updates == 0) continue;
    if (best == pool_size_ || std::abs(c.corr_ema) > std::abs(at(neuron, best).corr_ema)) best = p;
  }
  if (best == pool_size_) {
    throw StateError("select_and_freeze: neuron " + std::to_string(neuron) + " has no trained candidate");
  }
  return best;
}

double CandidatePool::mean_abs_correlation() const {
  if (candidates_.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : candidates_) s += std::abs(c.corr_ema);
  return s / static_cast<double>(candidates_.size());
}

const CandidatePool* CandidateBank::find(std::size_t layer) const {
  for (const auto& p : pools_)
    if (p.layer() == layer) return &p;
  return nullptr;
}

CandidatePool* CandidateBank::find(std::size_t layer) {
  for (auto& p : pools_)
    if (p.layer() == layer) return &p;
  return nullptr;
}

double CandidateBank::mean_abs_correlation() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& p : pools_)
    for (const auto& c : p.all()) {
      s += std::abs(c.corr_ema);
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

namespace {

// Dense weights are (fan_in, neurons): one column per neuron. Conv kernels
// are (neurons, C, kh, kw): one contiguous block per neuron.
void read_neuron(LayerKind kind, const Tensor& w, std::size_t neuron, std::span<double> out) {
  if (kind == LayerKind::Dense) {
    const std::size_t cols = w.dim(1);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = w[j * cols + neuron];
  } else {
    std::copy_n(w.raw() + neuron * out.size(), out.size(), out.begin());
  }
}

void write_neuron(LayerKind kind, Tensor& w, std::size_t neuron, std::span<const double> in) {
  if (kind == LayerKind::Dense) {
    const std::size_t cols = w.dim(1);
    for (std::size_t j = 0; j < in.size(); ++j) w[j * cols + neuron] = in[j];
  } else {
    std::copy(in.begin(), in.end(), w.raw() + neuron * in.size());
  }
}

// Values of one neuron across (sample, position) from an (N,F) or (N,F,H,W) tensor.
std::vector<double> neuron_series(const Tensor& t, std::size_t neuron, double scale = 1.0) {
  const std::size_t batch = t.dim(0), channels = t.dim(1), inner = t.size() / (batch * channels);
  std::vector<double> out(batch * inner);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* src = t.raw() + (n * channels + neuron) * inner;
    for (std::size_t i = 0; i < inner; ++i) out[n * inner + i] = src[i] * scale;
  }
  return out;
}

void check_pool(const CandidatePool& pool, const LayerTap& tap) {
  if (pool.levels() != tap.dendrite_outputs.size()) {
    throw StateError("candidates for layer " + std::to_string(pool.layer()) +
                     " were created for a different number of frozen dendrites");
  }
}

NodeId activate(Tape& tape, DendriteFunction fn, NodeId x) {
  switch (fn) {
    case DendriteFunction::Tanh: return tape.tanh(x);
    case DendriteFunction::Relu: return tape.relu(x);
    case DendriteFunction::Sigmoid: return tape.sigmoid(x);
  }
  return x;
}

}  // namespace

void perforate(Network& net, const DendriteConfig& config) {
  config.validate();
  if (net.perforation()) throw StateError("perforate: network is already perforated");
  std::size_t targeted = 0;
  for (auto& layer : net.layers()) {
    const bool hit = layer.kind == LayerKind::Dense ||
                     (layer.kind == LayerKind::Conv2d && config.perforate_target == PerforateTarget::LinearAndConv);
    if (hit) {
      layer.perforated = true;
      ++targeted;
    }
  }
  if (targeted == 0) throw StateError("perforate: no layer matches the perforation target");
  net.set_perforation({config.forward_fn, config.perforate_target, config.max_dendrites});
}

CandidateBank make_candidates(const Network& net, const DendriteConfig& config, Rng& rng) {
  config.validate();
  if (!net.perforation()) throw StateError("make_candidates: network is not perforated");
  CandidateBank bank;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& layer = net.layers()[i];
    if (!layer.perforated) continue;
    const std::size_t neurons = net.neurons(layer), fan_in = net.fan_in(layer), levels = layer.dendrites.size();
    CandidatePool pool(i, neurons, config.candidate_pool, fan_in, levels);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& c : pool.all()) {
      c.weights.resize(fan_in);
      for (auto& w : c.weights) w = rng.uniform(-bound, bound);
      c.prior.resize(levels);
      for (auto& u : c.prior) u = rng.uniform(-bound, bound);
      c.bias = rng.uniform(-bound, bound);
      c.output = config.mode == DendriteMode::GD ? config.init_magnitude : 0.0;
    }
    bank.pools().push_back(std::move(pool));
  }
  return bank;
}

CandidateBatch LayerBatch::view(std::size_t neuron) const {
  CandidateBatch b;
  b.inputs = inputs;
  b.samples = samples;
  b.fan_in = fan_in;
  for (const auto& p : priors.at(neuron)) b.prior_outputs.emplace_back(p);
  return b;
}

LayerBatch gather_layer_batch(const Network& net, const Tape& tape, const LayerTap& tap, const Gradients& grads) {
  const Layer& layer = net.layers().at(tap.layer);
  const Tensor& x = tape.value(tap.input);
  const std::size_t batch = x.dim(0), neurons = net.neurons(layer);
  LayerBatch lb;
  lb.fan_in = net.fan_in(layer);
  if (layer.kind == LayerKind::Dense) {
    lb.samples = batch;
    lb.inputs.assign(x.data().begin(), x.data().end());
  } else {
    const Tensor& w = net.parameters()[layer.weight].value;
    const conv::Geometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3)};
    const std::size_t in_stride = g.channels * g.height * g.width, rows = g.positions() * g.patch_size();
    lb.samples = batch * g.positions();
    lb.inputs.resize(batch * rows);
    for (std::size_t n = 0; n < batch; ++n) {
      conv::im2row(g, x.data().subspan(n * in_stride, in_stride), std::span(lb.inputs).subspan(n * rows, rows));
    }
  }
  const Tensor delta = grads.get(tap.preactivation);
  lb.errors.resize(neurons);
  lb.priors.resize(neurons);
  for (std::size_t f = 0; f < neurons; ++f) {
    lb.errors[f] = neuron_series(delta, f, static_cast<double>(batch));
    for (NodeId out : tap.dendrite_outputs) lb.priors[f].push_back(neuron_series(tape.value(out), f));
  }
  return lb;
}

void cc_train_step(CandidateBank& bank, const Network& net, const Tape& tape, const Trace& trace,
                   const Gradients& grads, const DendriteConfig& config, double lr) {
  const DendriteFunction fn = net.perforation().value().forward_fn;
  for (const auto& tap : trace.taps) {
    CandidatePool* pool = bank.find(tap.layer);
    if (!pool) continue;
    check_pool(*pool, tap);
    const LayerBatch lb = gather_layer_batch(net, tape, tap, grads);
    std::vector<double> pre(lb.samples), act(lb.samples), slope(lb.samples);
    for (std::size_t f = 0; f < pool->neurons(); ++f) {
      const CandidateBatch view = lb.view(f);
      for (std::size_t p = 0; p < pool->pool_size(); ++p) {
        DendriteCandidate& c = pool->at(f, p);
        candidate_preactivation(c, view, pre);
        for (std::size_t s = 0; s < lb.samples; ++s) {
          act[s] = dendrite_activation(fn, pre[s]);
          slope[s] = dendrite_slope(fn, pre[s]);
        }
        update_statistics(c, act, lb.errors[f], config.ema_decay);
        dendrite_weight_update(c, view, slope, lb.errors[f], lr, config.eq4_literal);
      }
    }
  }
}

void gd_dendrite_step(CandidatePool& pool, const Network& net, const LayerTap& tap, const Gradients& grads,
                      const DendriteConfig& config, double lr) {
  if (config.mode != DendriteMode::GD) throw StateError("gd_dendrite_step: dendrite mode is CC");
  if (tap.candidates.size() != pool.pool_size()) {
    throw StateError("gd_dendrite_step: candidates were not wired into the forward pass");
  }
  check_pool(pool, tap);
  const Layer& layer = net.layers().at(tap.layer);
  std::vector<double> gw(pool.fan_in());
  for (std::size_t p = 0; p < pool.pool_size(); ++p) {
    const CandidateTap& ct = tap.candidates[p];
    const Tensor w = grads.get(ct.weight);
    const Tensor b = grads.get(ct.bias);
    const Tensor o = grads.get(ct.output);
    std::vector<Tensor> u;
    for (NodeId id : ct.prior) u.push_back(grads.get(id));
    for (std::size_t f = 0; f < pool.neurons(); ++f) {
      DendriteCandidate& c = pool.at(f, p);
      read_neuron(layer.kind, w, f, gw);
      kernels::active().axpy(-lr, gw.data(), c.weights.data(), gw.size());
      c.bias -= lr * b[f];
      c.output -= lr * o[f];
      for (std::size_t d = 0; d < u.size(); ++d) c.prior[d] -= lr * u[d][f];
      if (!std::isfinite(c.bias) || !std::isfinite(c.output) ||
          !std::all_of(c.weights.begin(), c.weights.end(), [](double v) { return std::isfinite(v); })) {
        throw NumericalError("gd_dendrite_step: candidate weights diverged");
      }
    }
  }
}

void gd_train_step(CandidateBank& bank, const Network& net, const Tape& tape, const Trace& trace,
                   const Gradients& grads, const DendriteConfig& config, double lr) {
  for (const auto& tap : trace.taps) {
    CandidatePool* pool = bank.find(tap.layer);
    if (!pool) continue;
    const Tensor delta = grads.get(tap.preactivation);
    const double batch = static_cast<double>(delta.dim(0));
    for (std::size_t p = 0; p < pool->pool_size(); ++p) {
      const Tensor& act = tape.value(tap.candidates.at(p).activation);
      for (std::size_t f = 0; f < pool->neurons(); ++f) {
        update_statistics(pool->at(f, p), neuron_series(act, f), neuron_series(delta, f, batch), config.ema_decay);
      }
    }
    gd_dendrite_step(*pool, net, tap, grads, config, lr);
  }
}

void select_and_freeze(Network& net, const CandidatePool& pool, const DendriteConfig& config) {
  Layer& layer = net.layers().at(pool.layer());
  if (!layer.perforated) throw StateError("select_and_freeze: layer " + layer.name + " is not perforated");
  const std::size_t level = layer.dendrites.size();
  if (level != pool.levels()) throw StateError("select_and_freeze: candidates are stale for layer " + layer.name);
  const std::size_t limit = std::min(config.max_dendrites, net.perforation()->max_dendrites);
  if (level >= limit) {
    throw StateError("select_and_freeze: layer " + layer.name + " already has " + std::to_string(level) +
                     " dendrites per neuron (max " + std::to_string(limit) + ")");
  }
  const std::size_t neurons = pool.neurons();
  Tensor weight(net.parameters()[layer.weight].value.shape());
  Tensor bias({neurons});
  Tensor output({neurons});
  std::vector<Tensor> prior(level, Tensor({neurons}));
  for (std::size_t f = 0; f < neurons; ++f) {
    const DendriteCandidate& c = pool.at(f, pool.winner(f));
    write_neuron(layer.kind, weight, f, c.weights);
    bias[f] = c.bias;
    for (std::size_t d = 0; d < level; ++d) prior[d][f] = c.prior[d];
    output[f] = config.init_magnitude == 0.0 ? 0.0 : -c.sigma * config.init_magnitude;
  }
  const std::string prefix = "dendrite." + layer.name + "." + std::to_string(level) + ".";
  DendriteLevel lvl;
  lvl.weight = net.add_parameter(prefix + "weight", std::move(weight), ParamRole::DendriteInput);
  lvl.bias = net.add_parameter(prefix + "bias", std::move(bias), ParamRole::DendriteInput);
  for (std::size_t d = 0; d < level; ++d) {
    lvl.prior.push_back(net.add_parameter(prefix + "prior" + std::to_string(d), std::move(prior[d]),
                                          ParamRole::DendriteInput));
  }
  lvl.output = net.add_parameter(prefix + "output", std::move(output), ParamRole::DendriteOutput);
  layer.dendrites.push_back(std::move(lvl));
}

void select_and_freeze(Network& net, const CandidateBank& bank, const DendriteConfig& config) {
  for (const auto& pool : bank.pools()) select_and_freeze(net, pool, config);
}

std::size_t dendrite_levels(const Network& net) {
  std::size_t n = 0;
  for (const auto& layer : net.layers()) n = std::max(n, layer.dendrites.size());
  return n;
}

namespace detail {

NodeId perforated_preactivation(Tape& tape, const Network& net, std::size_t layer_index, NodeId input,
                                const Trace& trace, const ForwardOptions& options, LayerTap& tap) {
  const Layer& layer = net.layers()[layer_index];
  const DendriteFunction fn = net.perforation().value().forward_fn;
  auto linear = [&](NodeId w) {
    return layer.kind == LayerKind::Dense ? tape.matmul(input, w) : tape.conv2d(input, w);
  };
  tap.layer = layer_index;
  tap.input = input;

  NodeId pre = tape.bias_add(linear(trace.params[layer.weight]), trace.params[layer.bias]);
  for (std::size_t d = 0; d < layer.dendrites.size(); ++d) {
    const DendriteLevel& lvl = layer.dendrites[d];
    NodeId dp = tape.bias_add(linear(trace.params[lvl.weight]), trace.params[lvl.bias]);
    for (std::size_t k = 0; k < d; ++k) {
      dp = tape.add(dp, tape.channel_scale(tap.dendrite_outputs[k], trace.params[lvl.prior[k]]));
    }
    const NodeId out = activate(tape, fn, dp);
    tap.dendrite_outputs.push_back(out);
    const NodeId contribution = tape.channel_scale(out, trace.params[lvl.output]);
    tape.block(contribution, out);
    pre = tape.add(pre, contribution);
  }

  const CandidatePool* pool = options.candidates ? options.candidates->find(layer_index) : nullptr;
  if (pool) {
    check_pool(*pool, tap);
    const std::size_t neurons = pool->neurons();
    const Shape& wshape = net.parameters()[layer.weight].value.shape();
    for (std::size_t p = 0; p < pool->pool_size(); ++p) {
      Tensor w(wshape), b({neurons}), o({neurons});
      std::vector<Tensor> u(pool->levels(), Tensor({neurons}));
      for (std::size_t f = 0; f < neurons; ++f) {
        const DendriteCandidate& c = pool->at(f, p);
        write_neuron(layer.kind, w, f, c.weights);
        b[f] = c.bias;
        o[f] = c.output;
        for (std::size_t d = 0; d < u.size(); ++d) u[d][f] = c.prior[d];
      }
      CandidateTap ct;
      ct.weight = tape.leaf(std::move(w));
      ct.bias = tape.leaf(std::move(b));
      ct.output = tape.leaf(std::move(o));
      const NodeId lin = linear(ct.weight);
      tape.block(lin, input);
      NodeId cp = tape.bias_add(lin, ct.bias);
      for (std::size_t d = 0; d < u.size(); ++d) {
        ct.prior.push_back(tape.leaf(std::move(u[d])));
        const NodeId t = tape.channel_scale(tap.dendrite_outputs[d], ct.prior.back());
        tape.block(t, tap.dendrite_outputs[d]);
        cp = tape.add(cp, t);
      }
      ct.activation = activate(tape, fn, cp);
      pre = tape.add(pre, tape.channel_scale(ct.activation, ct.output));
      tap.candidates.push_back(std::move(ct));
    }
  }
  tap.preactivation = pre;
  return pre;
}

}  // namespace detail

}  // namespace pbp
