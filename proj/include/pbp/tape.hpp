// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "pbp/rng.hpp"
#include "pbp/tensor.hpp"

namespace pbp::autodiff {

struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class Primitive : std::uint8_t {
  Leaf,
  MatMul,
  Conv2d,
  BiasAdd,
  ChannelScale,
  Relu,
  Tanh,
  Sigmoid,
  Add,
  Mul,
  Flatten,
  MaxPool2x2,
  Dropout,
  GaussianNoise,
  Sum,
  SoftmaxCrossEntropy,
};

std::string_view primitive_name(Primitive p);

/// Result of a backward pass: one optional gradient per tape node.
/// Nodes that received no gradient (unreachable, blocked, or not requiring
/// grad) have none; get() reports them as zeros.
class Gradients {
 public:
  Gradients(std::vector<std::optional<Tensor>> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  const Tensor* find(NodeId id) const {
    const auto& g = grads_.at(id.index);
    return g ? &*g : nullptr;
  }
  Tensor get(NodeId id) const {
    if (const Tensor* g = find(id)) return *g;
    return Tensor(shapes_.at(id.index));
  }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<std::optional<Tensor>> grads_;
  std::vector<Shape> shapes_;
};

/// Records primitive applications in execution order and runs reverse-mode
/// differentiation over them. Edges registered with block() carry no
/// gradient: the producer receives exactly nothing from that consumer, which
/// is how dendrite outputs are kept out of the gradient-descent graph.
///
/// Every primitive validates shapes (ShapeError naming the primitive and both
/// shapes) and rejects non-finite results (NumericalError).
class Tape {
 public:
  NodeId leaf(Tensor value, bool requires_grad = true);

  /// (m x k) . (k x n)
  NodeId matmul(NodeId a, NodeId b);
  /// input (N,C,H,W), kernel (O,C,kh,kw); valid padding, stride 1.
  NodeId conv2d(NodeId input, NodeId kernel);
  /// Adds bias[c] along dim 1 of a rank-2 or rank-4 tensor.
  NodeId bias_add(NodeId x, NodeId bias);
  /// Multiplies by scale[c] along dim 1 of a rank-2 or rank-4 tensor.
  NodeId channel_scale(NodeId x, NodeId scale);
  NodeId relu(NodeId x);
  NodeId tanh(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  /// (N, ...) -> (N, prod(...))
  NodeId flatten(NodeId x);
  /// 2x2 window, stride 2, floor on odd sizes; ties go to the first element.
  NodeId max_pool2x2(NodeId x);
  /// Inverted dropout: kept entries are scaled by 1/(1-rate).
  NodeId dropout(NodeId x, double rate, Rng& rng);
  NodeId gaussian_noise(NodeId x, double stddev, Rng& rng);
  /// Sum of all entries, shape (1).
  NodeId sum(NodeId x);
  /// Mean softmax cross-entropy over the batch, shape (1).
  NodeId softmax_cross_entropy(NodeId logits, std::span<const std::size_t> labels);

  /// Force the gradient along consumer -> producer to zero. The edge must exist.
  void block(NodeId consumer, NodeId producer);
  bool is_blocked(NodeId consumer, NodeId producer) const;
  std::size_t blocked_count() const { return blocked_.size(); }

  const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
  Primitive primitive(NodeId id) const { return nodes_.at(id.index).op; }
  std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(id.index).inputs; }
  bool requires_grad(NodeId id) const { return nodes_.at(id.index).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Which side of every kink the recorded values sit on: ReLU input sign
  /// and max-pool argmax, in tape order. Two tapes of the same expression
  /// with equal signatures are on the same smooth piece.
  std::vector<std::uint32_t> branch_signature() const;

  /// Gradients of a scalar node with respect to every node that requires grad.
  Gradients backward(NodeId loss) const;

 private:
  struct Node {
    Primitive op = Primitive::Leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    std::vector<double> saved;         // dropout mask, softmax probabilities
    std::vector<std::size_t> indices;  // max-pool argmax, class labels
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;
  void backward_node(const Node& n, NodeId self, const Tensor& grad,
                     std::vector<std::optional<Tensor>>& grads) const;

  std::vector<Node> nodes_;
  std::set<std::pair<std::uint32_t, std::uint32_t>> blocked_;
};

}  // namespace pbp::autodiff
