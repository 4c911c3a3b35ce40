// SPDX-License-Identifier: Apache-2.0
#include "pbp/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pbp/conv.hpp"
#include "pbp/error.hpp"
#include "pbp/kernels.hpp"

namespace pbp::autodiff {

std::string_view primitive_name(Primitive p) {
  switch (p) {
    case Primitive::Leaf: return "leaf";
    case Primitive::MatMul: return "matmul";
    case Primitive::Conv2d: return "conv2d";
    case Primitive::BiasAdd: return "bias_add";
    case Primitive::ChannelScale: return "channel_scale";
    case Primitive::Relu: return "relu";
    case Primitive::Tanh: return "tanh";
    case Primitive::Sigmoid: return "sigmoid";
    case Primitive::Add: return "add";
    case Primitive::Mul: return "mul";
    case Primitive::Flatten: return "flatten";
    case Primitive::MaxPool2x2: return "max_pool2x2";
    case Primitive::Dropout: return "dropout";
    case Primitive::GaussianNoise: return "gaussian_noise";
    case Primitive::Sum: return "sum";
    case Primitive::SoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_mismatch(Primitive p, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(primitive_name(p)) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

// Size of dim 1 and the number of contiguous elements per (sample, channel).
struct ChannelLayout {
  std::size_t batch, channels, inner;
};

ChannelLayout channel_layout(Primitive p, const Shape& x, const Shape& per_channel) {
  if ((x.size() != 2 && x.size() != 4) || per_channel.size() != 1 || per_channel[0] != x[1]) {
    shape_mismatch(p, x, per_channel);
  }
  return {x[0], x[1], x.size() == 4 ? x[2] * x[3] : 1};
}

conv::Geometry conv_geometry(const Shape& in, const Shape& k) {
  return {in[1], in[2], in[3], k[2], k[3]};
}

void accumulate(std::vector<std::optional<Tensor>>& grads, NodeId id, Tensor contribution) {
  auto& slot = grads[id.index];
  if (!slot) {
    slot = std::move(contribution);
    return;
  }
  auto dst = slot->data();
  auto src = contribution.data();
  kernels::active().add(dst.data(), src.data(), dst.data(), dst.size());
}

}  // namespace

const Tape::Node& Tape::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw StateError("tape: unknown node id " + std::to_string(id.index));
  return nodes_[id.index];
}

NodeId Tape::push(Node n) {
  if (!n.value.all_finite()) {
    throw NumericalError(std::string(primitive_name(n.op)) + ": produced a non-finite value");
  }
  for (NodeId in : n.inputs) {
    if (in.index >= nodes_.size()) throw StateError("tape: input id out of range");
    n.requires_grad = n.requires_grad || nodes_[in.index].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Primitive::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) shape_mismatch(Primitive::MatMul, x.shape(), y.shape());
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out({m, n});
  kernels::gemm(kernels::Trans::No, kernels::Trans::No, m, n, k, x.raw(), y.raw(), out.raw(), false);
  return push({Primitive::MatMul, {a, b}, std::move(out), false, {}, {}});
}

NodeId Tape::conv2d(NodeId input, NodeId kernel) {
  const Tensor& x = node(input).value;
  const Tensor& w = node(kernel).value;
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1) || w.dim(2) > x.dim(2) || w.dim(3) > x.dim(3)) {
    shape_mismatch(Primitive::Conv2d, x.shape(), w.shape());
  }
  const auto g = conv_geometry(x.shape(), w.shape());
  const std::size_t batch = x.dim(0), outc = w.dim(0);
  Tensor out({batch, outc, g.out_h(), g.out_w()});
  std::vector<double> col(g.patch_size() * g.positions());
  const std::size_t in_stride = g.channels * g.height * g.width, out_stride = outc * g.positions();
  for (std::size_t n = 0; n < batch; ++n) {
    conv::im2col(g, x.data().subspan(n * in_stride, in_stride), col);
    kernels::gemm(kernels::Trans::No, kernels::Trans::No, outc, g.positions(), g.patch_size(), w.raw(), col.data(),
                  out.raw() + n * out_stride, false);
  }
  return push({Primitive::Conv2d, {input, kernel}, std::move(out), false, {}, {}});
}

NodeId Tape::bias_add(NodeId x, NodeId bias) {
  const Tensor& v = node(x).value;
  const Tensor& b = node(bias).value;
  const auto l = channel_layout(Primitive::BiasAdd, v.shape(), b.shape());
  Tensor out = v;
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      double* p = out.raw() + (n * l.channels + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) p[i] += b[c];
    }
  return push({Primitive::BiasAdd, {x, bias}, std::move(out), false, {}, {}});
}

NodeId Tape::channel_scale(NodeId x, NodeId scale) {
  const Tensor& v = node(x).value;
  const Tensor& s = node(scale).value;
  const auto l = channel_layout(Primitive::ChannelScale, v.shape(), s.shape());
  Tensor out = v;
  for (std::size_t n = 0; n < l.batch; ++n)
    for (std::size_t c = 0; c < l.channels; ++c) {
      double* p = out.raw() + (n * l.channels + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) p[i] *= s[c];
    }
  return push({Primitive::ChannelScale, {x, scale}, std::move(out), false, {}, {}});
}

NodeId Tape::relu(NodeId x) {
  const Tensor& v = node(x).value;
  Tensor out(v.shape());
  kernels::active().relu(v.raw(), out.raw(), v.size());
  return push({Primitive::Relu, {x}, std::move(out), false, {}, {}});
}

NodeId Tape::tanh(NodeId x) {
  Tensor out = node(x).value;
  for (auto& e : out.data()) e = std::tanh(e);
  return push({Primitive::Tanh, {x}, std::move(out), false, {}, {}});
}

NodeId Tape::sigmoid(NodeId x) {
  Tensor out = node(x).value;
  for (auto& e : out.data()) e = 1.0 / (1.0 + std::exp(-e));
  return push({Primitive::Sigmoid, {x}, std::move(out), false, {}, {}});
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.shape() != y.shape()) shape_mismatch(Primitive::Add, x.shape(), y.shape());
  Tensor out(x.shape());
  kernels::active().add(x.raw(), y.raw(), out.raw(), x.size());
  return push({Primitive::Add, {a, b}, std::move(out), false, {}, {}});
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& x = node(a).value;
  const Tensor& y = node(b).value;
  if (x.shape() != y.shape()) shape_mismatch(Primitive::Mul, x.shape(), y.shape());
  Tensor out(x.shape());
  kernels::active().mul(x.raw(), y.raw(), out.raw(), x.size());
  return push({Primitive::Mul, {a, b}, std::move(out), false, {}, {}});
}

NodeId Tape::flatten(NodeId x) {
  const Tensor& v = node(x).value;
  if (v.rank() < 1) throw ShapeError("flatten: rank-0 input");
  const std::size_t batch = v.dim(0);
  return push({Primitive::Flatten, {x}, v.reshaped({batch, batch ? v.size() / batch : 0}), false, {}, {}});
}

NodeId Tape::max_pool2x2(NodeId x) {
  const Tensor& v = node(x).value;
  if (v.rank() != 4 || v.dim(2) < 2 || v.dim(3) < 2) {
    throw ShapeError("max_pool2x2: needs (N,C,H>=2,W>=2), got " + shape_string(v.shape()));
  }
  const std::size_t planes = v.dim(0) * v.dim(1), h = v.dim(2), w = v.dim(3), oh = h / 2, ow = w / 2;
  Tensor out({v.dim(0), v.dim(1), oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = p * h * w + (2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = p * h * w + (2 * y + dy) * w + 2 * xx + dx;
            if (v[idx] > v[best]) best = idx;
          }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = v[best];
        argmax[o] = best;
      }
  return push({Primitive::MaxPool2x2, {x}, std::move(out), false, {}, std::move(argmax)});
}

NodeId Tape::dropout(NodeId x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must be in [0,1)");
  const Tensor& v = node(x).value;
  std::vector<double> mask(v.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
  Tensor out(v.shape());
  kernels::active().mul(v.raw(), mask.data(), out.raw(), v.size());
  return push({Primitive::Dropout, {x}, std::move(out), false, std::move(mask), {}});
}

NodeId Tape::gaussian_noise(NodeId x, double stddev, Rng& rng) {
  if (!(stddev >= 0.0)) throw ConfigError("gaussian_noise: stddev must be >= 0");
  Tensor out = node(x).value;
  for (auto& e : out.data()) e += stddev * rng.normal();
  return push({Primitive::GaussianNoise, {x}, std::move(out), false, {}, {}});
}

NodeId Tape::sum(NodeId x) {
  double s = 0.0;
  for (double e : node(x).value.data()) s += e;
  return push({Primitive::Sum, {x}, Tensor::scalar(s), false, {}, {}});
}

NodeId Tape::softmax_cross_entropy(NodeId logits, std::span<const std::size_t> labels) {
  const Tensor& z = node(logits).value;
  if (z.rank() != 2 || z.dim(0) != labels.size() || z.dim(0) == 0) {
    shape_mismatch(Primitive::SoftmaxCrossEntropy, z.shape(), Shape{labels.size()});
  }
  const std::size_t batch = z.dim(0), classes = z.dim(1);
  std::vector<double> probs(z.size());
  double loss = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    if (labels[n] >= classes) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[n]) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
    const double* row = z.raw() + n * classes;
    const double mx = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < classes; ++c) probs[n * classes + c] = std::exp(row[c] - mx) / denom;
    loss += std::log(denom) + mx - row[labels[n]];
  }
  Node n{Primitive::SoftmaxCrossEntropy, {logits}, Tensor::scalar(loss / static_cast<double>(batch)), false,
         std::move(probs), std::vector<std::size_t>(labels.begin(), labels.end())};
  return push(std::move(n));
}

void Tape::block(NodeId consumer, NodeId producer) {
  const auto& ins = node(consumer).inputs;
  if (std::find(ins.begin(), ins.end(), producer) == ins.end()) {
    throw StateError("tape: cannot block a non-existent edge " + std::to_string(consumer.index) + " <- " +
                     std::to_string(producer.index));
  }
  blocked_.emplace(consumer.index, producer.index);
}

bool Tape::is_blocked(NodeId consumer, NodeId producer) const {
  return blocked_.contains({consumer.index, producer.index});
}

std::vector<std::uint32_t> Tape::branch_signature() const {
  std::vector<std::uint32_t> sig;
  for (const auto& n : nodes_) {
    if (n.op == Primitive::Relu) {
      for (double v : nodes_[n.inputs[0].index].value.data()) sig.push_back(v > 0.0 ? 1 : 0);
    } else if (n.op == Primitive::MaxPool2x2) {
      for (auto i : n.indices) sig.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return sig;
}

Gradients Tape::backward(NodeId loss) const {
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(root.value.shape()));
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[loss.index] = Tensor(root.value.shape(), 1.0);
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!grads[i] || n.op == Primitive::Leaf) continue;
    for (NodeId in : n.inputs) {
      if (in.index >= i) throw StateError("backward: tape is not topologically ordered (cycle)");
    }
    // Inputs precede i, so *grads[i] is not written while it is read.
    backward_node(n, NodeId{static_cast<std::uint32_t>(i)}, *grads[i], grads);
  }
  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const auto& n : nodes_) shapes.push_back(n.value.shape());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (!nodes_[i].requires_grad) grads[i].reset();
  return Gradients(std::move(grads), std::move(shapes));
}

void Tape::backward_node(const Node& n, NodeId self, const Tensor& g, std::vector<std::optional<Tensor>>& grads) const {
  auto wants = [&](std::size_t slot) {
    const NodeId in = n.inputs[slot];
    return nodes_[in.index].requires_grad && !is_blocked(self, in);
  };
  const auto& act = kernels::active();

  switch (n.op) {
    case Primitive::Leaf:
      return;

    case Primitive::MatMul: {
      const Tensor& a = nodes_[n.inputs[0].index].value;
      const Tensor& b = nodes_[n.inputs[1].index].value;
      const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
      if (wants(0)) {
        Tensor da(a.shape());
        act.gemm(kernels::Trans::No, kernels::Trans::Yes, m, k, cols, g.raw(), b.raw(), da.raw(), false);
        accumulate(grads, n.inputs[0], std::move(da));
      }
      if (wants(1)) {
        Tensor db(b.shape());
        act.gemm(kernels::Trans::Yes, kernels::Trans::No, k, cols, m, a.raw(), g.raw(), db.raw(), false);
        accumulate(grads, n.inputs[1], std::move(db));
      }
      return;
    }

    case Primitive::Conv2d: {
      const Tensor& x = nodes_[n.inputs[0].index].value;
      const Tensor& w = nodes_[n.inputs[1].index].value;
      const auto geo = conv_geometry(x.shape(), w.shape());
      const std::size_t batch = x.dim(0), outc = w.dim(0), patch = geo.patch_size(), npos = geo.positions();
      const std::size_t in_stride = geo.channels * geo.height * geo.width, out_stride = outc * npos;
      const bool want_x = wants(0), want_w = wants(1);
      std::vector<double> col(patch * npos);
      Tensor dx = want_x ? Tensor(x.shape()) : Tensor();
      Tensor dw = want_w ? Tensor(w.shape()) : Tensor();
      for (std::size_t b = 0; b < batch; ++b) {
        const double* gb = g.raw() + b * out_stride;
        if (want_w) {
          conv::im2col(geo, x.data().subspan(b * in_stride, in_stride), col);
          act.gemm(kernels::Trans::No, kernels::Trans::Yes, outc, patch, npos, gb, col.data(), dw.raw(), true);
        }
        if (want_x) {
          act.gemm(kernels::Trans::Yes, kernels::Trans::No, patch, npos, outc, w.raw(), gb, col.data(), false);
          conv::col2im_add(geo, col, dx.data().subspan(b * in_stride, in_stride));
        }
      }
      if (want_x) accumulate(grads, n.inputs[0], std::move(dx));
      if (want_w) accumulate(grads, n.inputs[1], std::move(dw));
      return;
    }

    case Primitive::BiasAdd: {
      const Tensor& b = nodes_[n.inputs[1].index].value;
      if (wants(0)) accumulate(grads, n.inputs[0], g);
      if (wants(1)) {
        const auto l = channel_layout(n.op, g.shape(), b.shape());
        Tensor db(b.shape());
        for (std::size_t s = 0; s < l.batch; ++s)
          for (std::size_t c = 0; c < l.channels; ++c) {
            const double* p = g.raw() + (s * l.channels + c) * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) db[c] += p[i];
          }
        accumulate(grads, n.inputs[1], std::move(db));
      }
      return;
    }

    case Primitive::ChannelScale: {
      const Tensor& x = nodes_[n.inputs[0].index].value;
      const Tensor& s = nodes_[n.inputs[1].index].value;
      const auto l = channel_layout(n.op, x.shape(), s.shape());
      if (wants(0)) {
        Tensor dx(x.shape());
        for (std::size_t b = 0; b < l.batch; ++b)
          for (std::size_t c = 0; c < l.channels; ++c) {
            const std::size_t off = (b * l.channels + c) * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) dx[off + i] = g[off + i] * s[c];
          }
        accumulate(grads, n.inputs[0], std::move(dx));
      }
      if (wants(1)) {
        Tensor ds(s.shape());
        for (std::size_t b = 0; b < l.batch; ++b)
          for (std::size_t c = 0; c < l.channels; ++c) {
            const std::size_t off = (b * l.channels + c) * l.inner;
            ds[c] += act.dot(g.raw() + off, x.raw() + off, l.inner);
          }
        accumulate(grads, n.inputs[1], std::move(ds));
      }
      return;
    }

    case Primitive::Relu: {
      if (!wants(0)) return;
      const Tensor& x = nodes_[n.inputs[0].index].value;
      Tensor dx(x.shape());
      act.relu_backward(x.raw(), g.raw(), dx.raw(), x.size());
      accumulate(grads, n.inputs[0], std::move(dx));
      return;
    }

    case Primitive::Tanh:
    case Primitive::Sigmoid: {
      if (!wants(0)) return;
      Tensor dx(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value[i];
        dx[i] = g[i] * (n.op == Primitive::Tanh ? 1.0 - y * y : y * (1.0 - y));
      }
      accumulate(grads, n.inputs[0], std::move(dx));
      return;
    }

    case Primitive::Add:
      if (wants(0)) accumulate(grads, n.inputs[0], g);
      if (wants(1)) accumulate(grads, n.inputs[1], g);
      return;

    case Primitive::Mul: {
      const Tensor& a = nodes_[n.inputs[0].index].value;
      const Tensor& b = nodes_[n.inputs[1].index].value;
      if (wants(0)) {
        Tensor da(a.shape());
        act.mul(g.raw(), b.raw(), da.raw(), g.size());
        accumulate(grads, n.inputs[0], std::move(da));
      }
      if (wants(1)) {
        Tensor db(b.shape());
        act.mul(g.raw(), a.raw(), db.raw(), g.size());
        accumulate(grads, n.inputs[1], std::move(db));
      }
      return;
    }

    case Primitive::Flatten:
      if (wants(0)) accumulate(grads, n.inputs[0], g.reshaped(nodes_[n.inputs[0].index].value.shape()));
      return;

    case Primitive::MaxPool2x2: {
      if (!wants(0)) return;
      Tensor dx(nodes_[n.inputs[0].index].value.shape());
      for (std::size_t o = 0; o < g.size(); ++o) dx[n.indices[o]] += g[o];
      accumulate(grads, n.inputs[0], std::move(dx));
      return;
    }

    case Primitive::Dropout: {
      if (!wants(0)) return;
      Tensor dx(g.shape());
      act.mul(g.raw(), n.saved.data(), dx.raw(), g.size());
      accumulate(grads, n.inputs[0], std::move(dx));
      return;
    }

    case Primitive::GaussianNoise:
      if (wants(0)) accumulate(grads, n.inputs[0], g);
      return;

    case Primitive::Sum:
      if (wants(0)) accumulate(grads, n.inputs[0], Tensor(nodes_[n.inputs[0].index].value.shape(), g[0]));
      return;

    case Primitive::SoftmaxCrossEntropy: {
      if (!wants(0)) return;
      const Shape& zs = nodes_[n.inputs[0].index].value.shape();
      const std::size_t batch = zs[0], classes = zs[1];
      const double scale = g[0] / static_cast<double>(batch);
      Tensor dz(zs);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < classes; ++c) {
          const double target = (c == n.indices[b]) ? 1.0 : 0.0;
          dz[b * classes + c] = (n.saved[b * classes + c] - target) * scale;
        }
      accumulate(grads, n.inputs[0], std::move(dz));
      return;
    }
  }
}

}  // namespace pbp::autodiff
