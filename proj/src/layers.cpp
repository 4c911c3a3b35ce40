// SPDX-License-Identifier: Apache-2.0
#include "pbp/layers.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "pbp/error.hpp"
#include "pbp/perforation.hpp"
#include "pbp/tensor_io.hpp"

namespace pbp {

using autodiff::NodeId;
using autodiff::Tape;

std::vector<std::size_t> width_schedule(GrowthMode mode, std::size_t base_width, std::size_t n_layers) {
  std::vector<std::size_t> widths(n_layers, base_width);
  if (mode == GrowthMode::Doubling) {
    for (std::size_t i = 0; i < n_layers; ++i) widths[i] = base_width << i;
  }
  return widths;
}

void ArchitectureSpec::validate() const {
  if (linear_layers < 1) throw ConfigError("architecture: linear_layers must be >= 1");
  if (base_width < 1) throw ConfigError("architecture: base_width must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("architecture: dropout_rate must be in [0,1)");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("architecture: noise_std must be >= 0");
  if (num_classes < 2) throw ConfigError("architecture: num_classes must be >= 2");
  if (input_shape.size() != 1 && input_shape.size() != 3) {
    throw ConfigError("architecture: input_shape must be {features} or {channels,height,width}");
  }
  if (std::find(input_shape.begin(), input_shape.end(), 0) != input_shape.end()) {
    throw ConfigError("architecture: input_shape has a zero dimension");
  }
  if (conv_layers > 0 && input_shape.size() != 3) {
    throw ConfigError("architecture: conv layers need an image input {channels,height,width}");
  }
  if (conv_layers + linear_layers > 40) throw ConfigError("architecture: too many layers");
}

std::vector<std::size_t> ArchitectureSpec::hidden_widths() const {
  return width_schedule(growth_mode, base_width, conv_layers + linear_layers - 1);
}

std::size_t Network::add_parameter(std::string name, Tensor value, ParamRole role) {
  if (find_parameter(name)) throw StateError("network: duplicate parameter name '" + name + "'");
  params_.push_back({std::move(name), std::move(value), role});
  return params_.size() - 1;
}

std::optional<std::size_t> Network::find_parameter(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  return std::nullopt;
}

const Parameter& Network::parameter(std::string_view name) const {
  if (auto i = find_parameter(name)) return params_[*i];
  throw StateError("network: no parameter named '" + std::string(name) + "'");
}

std::size_t Network::neurons(const Layer& layer) const {
  const Tensor& w = params_.at(layer.weight).value;
  return layer.kind == LayerKind::Dense ? w.dim(1) : w.dim(0);
}

std::size_t Network::fan_in(const Layer& layer) const {
  const Tensor& w = params_.at(layer.weight).value;
  return layer.kind == LayerKind::Dense ? w.dim(0) : w.dim(1) * w.dim(2) * w.dim(3);
}

Trace Network::forward(Tape& tape, const Tensor& batch, const ForwardOptions& options) const {
  if (batch.rank() != spec_.input_shape.size() + 1 ||
      !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), batch.shape().begin() + 1)) {
    throw ShapeError("network: batch shape " + shape_string(batch.shape()) + " does not match input " +
                     shape_string(spec_.input_shape));
  }
  Trace trace;
  trace.input = tape.leaf(batch, false);
  trace.params.reserve(params_.size());
  for (const auto& p : params_) trace.params.push_back(tape.leaf(p.value, options.track_params));

  const bool train = options.mode == Mode::Train;
  NodeId x = trace.input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    switch (layer.kind) {
      case LayerKind::Conv2d:
      case LayerKind::Dense:
        if (layer.perforated) {
          LayerTap tap;
          x = detail::perforated_preactivation(tape, *this, i, x, trace, options, tap);
          trace.taps.push_back(std::move(tap));
        } else {
          const NodeId w = trace.params[layer.weight];
          const NodeId lin = layer.kind == LayerKind::Dense ? tape.matmul(x, w) : tape.conv2d(x, w);
          x = tape.bias_add(lin, trace.params[layer.bias]);
        }
        break;
      case LayerKind::Relu:
        x = tape.relu(x);
        break;
      case LayerKind::MaxPool2x2:
        x = tape.max_pool2x2(x);
        break;
      case LayerKind::Flatten:
        x = tape.flatten(x);
        break;
      case LayerKind::Dropout:
      case LayerKind::GaussianNoise:
        if (!train || layer.rate == 0.0) break;
        if (!options.rng) throw StateError("network: train-mode forward with stochastic layers needs an rng");
        x = layer.kind == LayerKind::Dropout ? tape.dropout(x, layer.rate, *options.rng)
                                             : tape.gaussian_noise(x, layer.rate, *options.rng);
        break;
    }
  }
  trace.logits = x;
  return trace;
}

Tensor Network::predict(const Tensor& batch) const {
  Tape tape;
  ForwardOptions opts;
  opts.track_params = false;
  const Trace t = forward(tape, batch, opts);
  return tape.value(t.logits);
}

namespace {

Layer make_layer(LayerKind kind, std::string name, double rate = 0.0) {
  Layer l;
  l.kind = kind;
  l.name = std::move(name);
  l.rate = rate;
  return l;
}

}  // namespace

Network build_network(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net(spec);
  Rng rng(derive_seed(seed, stream::kInit));
  const auto widths = spec.hidden_widths();

  auto init_uniform = [&](Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
  };
  auto add_regularizers = [&]() {
    if (spec.dropout_rate > 0.0) net.add_layer(make_layer(LayerKind::Dropout, "dropout", spec.dropout_rate));
    if (spec.noise_std > 0.0) net.add_layer(make_layer(LayerKind::GaussianNoise, "noise", spec.noise_std));
  };

  std::size_t channels = spec.input_shape[0];
  std::size_t height = spec.input_shape.size() == 3 ? spec.input_shape[1] : 1;
  std::size_t width = spec.input_shape.size() == 3 ? spec.input_shape[2] : 1;
  for (std::size_t i = 0; i < spec.conv_layers; ++i) {
    if (height < 4 || width < 4) {
      throw ConfigError("architecture: spatial dimension underflow at conv layer " + std::to_string(i) + " (input " +
                        std::to_string(height) + "x" + std::to_string(width) +
                        " cannot take a 3x3 valid conv followed by 2x2 pooling)");
    }
    const std::size_t out = widths[i];
    const std::string name = "conv" + std::to_string(i);
    Layer conv = make_layer(LayerKind::Conv2d, name);
    conv.weight = net.add_parameter(name + ".weight", init_uniform({out, channels, 3, 3}, channels * 9), ParamRole::Neuron);
    conv.bias = net.add_parameter(name + ".bias", init_uniform({out}, channels * 9), ParamRole::Neuron);
    net.add_layer(std::move(conv));
    net.add_layer(make_layer(LayerKind::Relu, "relu"));
    net.add_layer(make_layer(LayerKind::MaxPool2x2, "pool"));
    add_regularizers();
    channels = out;
    height = (height - 2) / 2;
    width = (width - 2) / 2;
  }

  std::size_t features = channels * height * width;
  if (spec.input_shape.size() == 3) net.add_layer(make_layer(LayerKind::Flatten, "flatten"));
  for (std::size_t i = 0; i < spec.linear_layers; ++i) {
    const bool last = i + 1 == spec.linear_layers;
    const std::size_t out = last ? spec.num_classes : widths[spec.conv_layers + i];
    const std::string name = "dense" + std::to_string(i);
    Layer dense = make_layer(LayerKind::Dense, name);
    dense.weight = net.add_parameter(name + ".weight", init_uniform({features, out}, features), ParamRole::Neuron);
    dense.bias = net.add_parameter(name + ".bias", init_uniform({out}, features), ParamRole::Neuron);
    net.add_layer(std::move(dense));
    if (!last) {
      net.add_layer(make_layer(LayerKind::Relu, "relu"));
      add_regularizers();
    }
    features = out;
  }
  return net;
}

std::size_t param_count(const Network& net) {
  std::size_t n = 0;
  for (const auto& p : net.parameters()) n += p.value.size();
  return n;
}

namespace {

constexpr std::string_view kArchRecord = "meta.architecture";
constexpr std::string_view kDendriteRecord = "dendrite.meta";

Tensor encode_spec(const ArchitectureSpec& s) {
  std::vector<double> v{static_cast<double>(s.conv_layers),
                        static_cast<double>(s.linear_layers),
                        static_cast<double>(s.base_width),
                        static_cast<double>(s.growth_mode),
                        s.dropout_rate,
                        s.noise_std,
                        static_cast<double>(s.num_classes),
                        static_cast<double>(s.input_shape.size())};
  for (auto d : s.input_shape) v.push_back(static_cast<double>(d));
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

ArchitectureSpec decode_spec(const Tensor& t) {
  if (t.size() < 9) throw ConfigError("network file: truncated architecture record");
  auto count = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
  ArchitectureSpec s;
  s.conv_layers = count(0);
  s.linear_layers = count(1);
  s.base_width = count(2);
  if (count(3) > 1) throw ConfigError("network file: unknown growth mode");
  s.growth_mode = static_cast<GrowthMode>(count(3));
  s.dropout_rate = t[4];
  s.noise_std = t[5];
  s.num_classes = count(6);
  const std::size_t rank = count(7);
  if (t.size() != 8 + rank) throw ConfigError("network file: malformed architecture record");
  s.input_shape.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) s.input_shape[i] = count(8 + i);
  return s;
}

}  // namespace

void save_network(const Network& net, const std::filesystem::path& path) {
  std::vector<NamedTensor> records;
  records.push_back({std::string(kArchRecord), encode_spec(net.spec()), false});
  if (const auto& perf = net.perforation()) {
    records.push_back({std::string(kDendriteRecord),
                       Tensor::from({static_cast<double>(perf->forward_fn), static_cast<double>(perf->target),
                                     static_cast<double>(perf->max_dendrites)}),
                       false});
  }
  for (const auto& p : net.parameters()) records.push_back({p.name, p.value, p.frozen()});
  write_tensor_file(path, records);
}

Network load_network(const std::filesystem::path& path) {
  auto records = read_tensor_file(path);
  if (records.empty() || records.front().name != kArchRecord) {
    throw ConfigError("network file: first record must be " + std::string(kArchRecord));
  }
  Network net = build_network(decode_spec(records.front().tensor), 0);
  std::vector<bool> seen(net.parameters().size(), false);

  for (std::size_t r = 1; r < records.size(); ++r) {
    auto& rec = records[r];
    if (rec.name == kDendriteRecord) {
      if (rec.tensor.size() != 3 || rec.tensor[0] > 2 || rec.tensor[1] > 1 || rec.tensor[2] < 1) {
        throw ConfigError("network file: malformed dendrite.meta record");
      }
      PerforationState st{static_cast<DendriteFunction>(rec.tensor[0]), static_cast<PerforateTarget>(rec.tensor[1]),
                          static_cast<std::size_t>(rec.tensor[2])};
      net.set_perforation(st);
      for (auto& layer : net.layers()) {
        layer.perforated = layer.kind == LayerKind::Dense ||
                           (layer.kind == LayerKind::Conv2d && st.target == PerforateTarget::LinearAndConv);
      }
      continue;
    }
    if (rec.name.starts_with("dendrite.")) {
      // dendrite.<layer>.<level>.<field>
      const std::string rest = rec.name.substr(9);
      const auto a = rest.find('.');
      const auto b = rest.find('.', a == std::string::npos ? a : a + 1);
      if (a == std::string::npos || b == std::string::npos || !net.perforation()) {
        throw ConfigError("network file: unexpected dendrite record '" + rec.name + "'");
      }
      const std::string layer_name = rest.substr(0, a);
      const std::size_t level = std::stoul(rest.substr(a + 1, b - a - 1));
      const std::string field = rest.substr(b + 1);
      auto it = std::find_if(net.layers().begin(), net.layers().end(),
                             [&](const Layer& l) { return l.name == layer_name && l.perforated; });
      if (it == net.layers().end()) throw ConfigError("network file: no perforated layer '" + layer_name + "'");
      Layer& layer = *it;
      if (field == "weight") {
        if (level != layer.dendrites.size()) throw ConfigError("network file: dendrite levels out of order");
        if (rec.tensor.shape() != net.parameters()[layer.weight].value.shape()) {
          throw ConfigError("network file: dendrite weight shape mismatch for '" + rec.name + "'");
        }
        layer.dendrites.emplace_back();
      } else if (level + 1 != layer.dendrites.size()) {
        throw ConfigError("network file: dendrite record '" + rec.name + "' without its weight");
      } else if (rec.tensor.shape() != Shape{net.neurons(layer)}) {
        throw ConfigError("network file: shape mismatch for '" + rec.name + "'");
      }
      DendriteLevel& lvl = layer.dendrites.back();
      const ParamRole role = field == "output" ? ParamRole::DendriteOutput : ParamRole::DendriteInput;
      if (rec.frozen != (role == ParamRole::DendriteInput)) {
        throw ConfigError("network file: wrong frozen flag on '" + rec.name + "'");
      }
      const std::size_t idx = net.add_parameter(rec.name, std::move(rec.tensor), role);
      if (field == "weight") {
        lvl.weight = idx;
      } else if (field == "bias") {
        lvl.bias = idx;
      } else if (field == "output") {
        lvl.output = idx;
      } else if (field == "prior" + std::to_string(lvl.prior.size())) {
        lvl.prior.push_back(idx);
      } else {
        throw ConfigError("network file: unknown dendrite field '" + rec.name + "'");
      }
      continue;
    }
    const auto idx = net.find_parameter(rec.name);
    if (!idx || *idx >= seen.size()) throw ConfigError("network file: unknown tensor '" + rec.name + "'");
    auto& param = net.parameters()[*idx];
    if (param.value.shape() != rec.tensor.shape()) {
      throw ConfigError("network file: shape mismatch for '" + rec.name + "'");
    }
    param.value = std::move(rec.tensor);
    seen[*idx] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ConfigError("network file: missing neuron parameters");
  }
  for (const auto& layer : net.layers())
    for (std::size_t d = 0; d < layer.dendrites.size(); ++d) {
      const auto& lvl = layer.dendrites[d];
      if (lvl.bias == kNoParam || lvl.output == kNoParam || lvl.prior.size() != d) {
        throw ConfigError("network file: incomplete dendrite level " + std::to_string(d) + " on " + layer.name);
      }
    }
  return net;
}

}  // namespace pbp
