// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"
#include "pbp/digest.hpp"
#include "pbp/error.hpp"
#include "pbp/perforation.hpp"

using namespace pbp;
using autodiff::Gradients;
using autodiff::NodeId;
using autodiff::Tape;
using testing_helpers::random_labels;
using testing_helpers::random_tensor;

namespace {

ArchitectureSpec dense_spec(std::size_t in, std::size_t linear, std::size_t width, std::size_t classes) {
  ArchitectureSpec s;
  s.input_shape = {in};
  s.linear_layers = linear;
  s.base_width = width;
  s.num_classes = classes;
  return s;
}

ArchitectureSpec conv_spec() {
  ArchitectureSpec s;
  s.conv_layers = 1;
  s.linear_layers = 2;
  s.base_width = 3;
  s.input_shape = {2, 6, 6};
  s.num_classes = 3;
  return s;
}

struct Step {
  Tape tape;
  Trace trace;
  NodeId loss;
};

Step forward_loss(const Network& net, const Tensor& x, const std::vector<std::size_t>& y,
                  const CandidateBank* bank = nullptr) {
  Step s;
  ForwardOptions o;
  o.candidates = bank;
  s.trace = net.forward(s.tape, x, o);
  s.loss = s.tape.softmax_cross_entropy(s.trace.logits, y);
  return s;
}

// Per-sample pre-activation delta of an output layer under mean softmax
// cross-entropy, scaled by the batch size: softmax(z) - onehot(y).
std::vector<std::vector<double>> output_deltas(const Tensor& logits, const std::vector<std::size_t>& y) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::vector<double>> delta(k, std::vector<double>(n));
  for (std::size_t s = 0; s < n; ++s) {
    double mx = -1e300;
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, logits[s * k + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits[s * k + c] - mx);
    for (std::size_t c = 0; c < k; ++c) {
      delta[c][s] = std::exp(logits[s * k + c] - mx) / z - (c == y[s] ? 1.0 : 0.0);
    }
  }
  return delta;
}

}  // namespace

TEST_CASE("dendrite_error examples") {
  CHECK(dendrite_error(1.0, 0.4, 0.3, 0.1) == doctest::Approx(0.12).epsilon(1e-14));
  CHECK(dendrite_error(0.7, 0.7, 123.0, -4.0) == 0.0);
  Rng rng(1);
  for (int i = 0; i < 8; ++i) {
    const double g = rng.uniform(-1, 1), ag = rng.uniform(-1, 1), d = rng.uniform(-1, 1), ad = rng.uniform(-1, 1);
    const double expected = g * d - g * ad - ag * d + ag * ad;
    CHECK(std::abs(dendrite_error(g, ag, d, ad) - expected) <= 1e-12);
  }
}

TEST_CASE("update_statistics: first batch sets the averages to the batch means") {
  DendriteCandidate c;
  const std::vector<double> g{0.2, 0.4, 0.9}, d{1.0, -1.0, 3.0};
  update_statistics(c, g, d, 0.3);
  CHECK(c.avg_activation == doctest::Approx(0.5));
  CHECK(c.avg_error == doctest::Approx(1.0));
  // covariance about those means: ((-0.3)(0) + (-0.1)(-2) + (0.4)(2)) / 3
  CHECK(c.corr_ema == doctest::Approx(1.0 / 3.0));
  CHECK(c.sigma == 1);
  CHECK(c.updates == 1);
}

TEST_CASE("update_statistics: decay 0.9 over batch means 1.0 then 0.0 gives 0.9") {
  DendriteCandidate c;
  const std::vector<double> ones(4, 1.0), zeros(4, 0.0);
  update_statistics(c, ones, zeros, 0.9);
  update_statistics(c, zeros, zeros, 0.9);
  CHECK(c.avg_activation == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("update_statistics: a constant activation stream converges to the constant") {
  DendriteCandidate c;
  const std::vector<double> first{0.0, 2.0}, d{0.1, -0.1};
  update_statistics(c, first, d, 0.5);
  const std::vector<double> constant(2, 0.25);
  for (int i = 0; i < 80; ++i) update_statistics(c, constant, d, 0.5);
  CHECK(c.avg_activation == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("sigma follows the sign of corr_ema and is +1 at zero") {
  DendriteCandidate c;
  update_statistics(c, std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0}, 0.9);
  CHECK(c.corr_ema < 0.0);
  CHECK(c.sigma == -1);
  DendriteCandidate z;
  update_statistics(z, std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0}, 0.9);
  CHECK(z.corr_ema == 0.0);
  CHECK(z.sigma == 1);
}

TEST_CASE("dendrite_weight_update examples") {
  for (int sigma : {1, -1}) {
    DendriteCandidate c;
    c.weights = {0.0};
    c.updates = 1;
    c.sigma = sigma;
    c.avg_error = 0.0;
    const std::vector<double> x{1.0};
    CandidateBatch b{x, 1, 1, {}};
    dendrite_weight_update(c, b, std::vector<double>{0.5}, std::vector<double>{0.2}, 0.1);
    CHECK(c.weights[0] == doctest::Approx(sigma * 0.01).epsilon(1e-14));
  }
}

TEST_CASE("dendrite_weight_update requires statistics and finite results") {
  DendriteCandidate c;
  c.weights = {0.0};
  const std::vector<double> x{1.0};
  CandidateBatch b{x, 1, 1, {}};
  CHECK_THROWS_AS(dendrite_weight_update(c, b, std::vector<double>{1.0}, std::vector<double>{1.0}, 0.1), StateError);
  c.updates = 1;
  c.avg_error = 0.0;
  CHECK_THROWS_AS(dendrite_weight_update(c, b, std::vector<double>{1.0}, std::vector<double>{1e300}, 1e300),
                  NumericalError);
}

TEST_CASE("3-input candidate on a batch of 4 matches the straight-loop oracle") {
  Rng rng(3);
  for (bool literal : {false, true}) {
    for (int trial = 0; trial < 20; ++trial) {
      oracle::Candidate o;
      DendriteCandidate c;
      for (int j = 0; j < 3; ++j) o.w.push_back(rng.uniform(-1, 1));
      o.u = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      o.b = rng.uniform(-1, 1);
      c.weights = o.w;
      c.prior = o.u;
      c.bias = o.b;
      for (int step = 0; step < 3; ++step) {
        std::vector<std::vector<double>> x(4, std::vector<double>(3)), p(2, std::vector<double>(4));
        std::vector<double> delta(4), flat;
        for (auto& row : x)
          for (auto& v : row) {
            v = rng.uniform(-2, 2);
            flat.push_back(v);
          }
        for (auto& row : p)
          for (auto& v : row) v = rng.uniform(-1, 1);
        for (auto& v : delta) v = rng.uniform(-1, 1);
        oracle::correlation_step(o, x, p, delta, 0.8, 0.3, literal);

        CandidateBatch b{flat, 4, 3, {p[0], p[1]}};
        std::vector<double> pre(4), g(4), slope(4);
        candidate_preactivation(c, b, pre);
        for (int s = 0; s < 4; ++s) {
          g[s] = dendrite_activation(DendriteFunction::Tanh, pre[s]);
          slope[s] = dendrite_slope(DendriteFunction::Tanh, pre[s]);
        }
        update_statistics(c, g, delta, 0.8);
        dendrite_weight_update(c, b, slope, delta, 0.3, literal);
      }
      for (int j = 0; j < 3; ++j) CHECK(std::abs(c.weights[j] - o.w[j]) <= 1e-12);
      for (int d = 0; d < 2; ++d) CHECK(std::abs(c.prior[d] - o.u[d]) <= 1e-12);
      CHECK(std::abs(c.bias - o.b) <= 1e-12);
      CHECK(std::abs(c.corr_ema - o.corr) <= 1e-12);
      CHECK(std::abs(c.avg_activation - o.avg_g) <= 1e-12);
      CHECK(std::abs(c.avg_error - o.avg_delta) <= 1e-12);
      CHECK(c.sigma == o.sigma);
    }
  }
}

TEST_CASE("eq4_literal drops the input factor but keeps the bias update") {
  DendriteCandidate a, b;
  a.weights = b.weights = {0.0, 0.0};
  a.updates = b.updates = 1;
  const std::vector<double> x{2.0, -3.0};
  CandidateBatch batch{x, 1, 2, {}};
  dendrite_weight_update(a, batch, std::vector<double>{1.0}, std::vector<double>{1.0}, 1.0, false);
  dendrite_weight_update(b, batch, std::vector<double>{1.0}, std::vector<double>{1.0}, 1.0, true);
  CHECK(a.weights == std::vector<double>{2.0, -3.0});
  CHECK(b.weights == std::vector<double>{1.0, 1.0});
  CHECK(a.bias == b.bias);
}

TEST_CASE("perforate: LinearOnly wraps only dense layers and leaves outputs bit-identical") {
  Network net = build_network(conv_spec(), 1);
  Rng rng(2);
  const Tensor x = random_tensor(rng, {3, 2, 6, 6});
  const Tensor before = net.predict(x);
  DendriteConfig cfg;
  perforate(net, cfg);
  for (const auto& layer : net.layers()) CHECK(layer.perforated == (layer.kind == LayerKind::Dense));
  CHECK(net.predict(x).identical(before));
  CHECK_THROWS_AS(perforate(net, cfg), StateError);
}

TEST_CASE("perforate: LinearAndConv wraps conv and dense layers") {
  Network net = build_network(conv_spec(), 1);
  DendriteConfig cfg;
  cfg.perforate_target = PerforateTarget::LinearAndConv;
  perforate(net, cfg);
  for (const auto& layer : net.layers()) CHECK(layer.perforated == layer.has_weights());
}

TEST_CASE("perforate: a network without weight layers is an error") {
  Network empty(dense_spec(2, 1, 2, 2));
  CHECK_THROWS_AS(perforate(empty, DendriteConfig{}), StateError);
}

TEST_CASE("select_and_freeze picks the largest |corr|, lowest index on ties") {
  Network net = build_network(dense_spec(2, 1, 2, 2), 1);
  DendriteConfig cfg;
  cfg.candidate_pool = 3;
  cfg.init_magnitude = 0.01;
  perforate(net, cfg);
  Rng rng(1);
  auto bank = make_candidates(net, cfg, rng);
  auto& pool = bank.pools().at(0);
  const double corr[2][3] = {{0.1, -0.5, 0.3}, {0.2, -0.2, 0.2}};
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t p = 0; p < 3; ++p) {
      auto& c = pool.at(f, p);
      c.corr_ema = corr[f][p];
      c.sigma = corr[f][p] < 0 ? -1 : 1;
      c.updates = 1;
    }
  CHECK(pool.winner(0) == 1);
  CHECK(pool.winner(1) == 0);
  select_and_freeze(net, bank, cfg);
  const Layer& layer = net.layers()[0];
  REQUIRE(layer.dendrites.size() == 1);
  const Tensor& w = net.parameters()[layer.dendrites[0].weight].value;
  CHECK(w[0 * 2 + 0] == pool.at(0, 1).weights[0]);
  CHECK(w[1 * 2 + 1] == pool.at(1, 0).weights[1]);
  const Tensor& out = net.parameters()[layer.dendrites[0].output].value;
  CHECK(out[0] == 0.01);   // sigma -1
  CHECK(out[1] == -0.01);  // sigma +1
  CHECK(net.parameter("dendrite.dense0.0.weight").frozen());
  CHECK(!net.parameter("dendrite.dense0.0.output").frozen());
  CHECK_THROWS_AS(select_and_freeze(net, bank, cfg), StateError);
}

TEST_CASE("select_and_freeze refuses untrained pools and full layers") {
  Network net = build_network(dense_spec(2, 1, 2, 2), 1);
  DendriteConfig cfg;
  perforate(net, cfg);
  Rng rng(1);
  auto bank = make_candidates(net, cfg, rng);
  CHECK_THROWS_AS(select_and_freeze(net, bank, cfg), StateError);
  testing_helpers::grow_dendrites(net, cfg, 2);
  CHECK_THROWS_AS(testing_helpers::grow_dendrites(net, cfg, 3), StateError);
}

TEST_CASE("incorporation with init_magnitude 0 leaves outputs bit-identical; small m moves them by O(m)") {
  for (auto target : {PerforateTarget::LinearOnly, PerforateTarget::LinearAndConv}) {
    Network net = build_network(conv_spec(), 5);
    DendriteConfig cfg;
    cfg.perforate_target = target;
    cfg.init_magnitude = 0.0;
    cfg.max_dendrites = 3;
    perforate(net, cfg);
    Rng rng(6);
    const Tensor x = random_tensor(rng, {4, 2, 6, 6});
    const Tensor before = net.predict(x);
    testing_helpers::grow_dendrites(net, cfg, 7);
    CHECK(net.predict(x).identical(before));

    Network small = net;
    DendriteConfig m = cfg;
    m.init_magnitude = 1e-6;
    testing_helpers::grow_dendrites(small, m, 8);
    const Tensor after = small.predict(x);
    double diff = 0.0;
    for (std::size_t i = 0; i < after.size(); ++i) diff = std::max(diff, std::abs(after[i] - before[i]));
    CHECK(diff > 0.0);
    CHECK(diff < 1e-3);
  }
}

TEST_CASE("frozen dendrite inputs get exactly zero task gradient; output weights do not") {
  for (auto target : {PerforateTarget::LinearOnly, PerforateTarget::LinearAndConv}) {
    ArchitectureSpec spec = conv_spec();
    spec.base_width = 8;
    Network net = build_network(spec, 9);
    DendriteConfig cfg;
    cfg.perforate_target = target;
    cfg.max_dendrites = 2;
    cfg.init_magnitude = 0.1;
    perforate(net, cfg);
    testing_helpers::grow_dendrites(net, cfg, 1);
    testing_helpers::grow_dendrites(net, cfg, 2);
    Rng rng(10);
    for (int step = 0; step < 5; ++step) {
      const Tensor x = random_tensor(rng, {4, 2, 6, 6});
      const auto y = random_labels(rng, 4, 3);
      Step s = forward_loss(net, x, y);
      const Gradients g = s.tape.backward(s.loss);
      for (std::size_t p = 0; p < net.parameters().size(); ++p) {
        const auto& param = net.parameters()[p];
        const Tensor grad = g.get(s.trace.params[p]);
        if (param.frozen()) {
          for (double v : grad.data()) CHECK(v == 0.0);
        } else if (param.role == ParamRole::DendriteOutput) {
          CAPTURE(param.name);
          CAPTURE(step);
          double mx = 0.0;
          for (double v : grad.data()) mx = std::max(mx, std::abs(v));
          CHECK(mx > 0.0);
        }
        // SGD on everything trainable, like the neuron phase
        if (!param.frozen()) {
          auto& value = net.parameters()[p].value;
          for (std::size_t i = 0; i < value.size(); ++i) value[i] -= 0.1 * grad[i];
        }
      }
    }
  }
}

TEST_CASE("CC statistics on a 3-neuron output layer match the oracle over 100 mini-batches") {
  for (int levels = 0; levels <= 1; ++levels) {
    Network net = build_network(dense_spec(4, 1, 8, 3), 12);
    DendriteConfig cfg;
    cfg.candidate_pool = 2;
    cfg.ema_decay = 0.9;
    cfg.max_dendrites = 2;
    cfg.init_magnitude = 0.3;
    perforate(net, cfg);
    if (levels) testing_helpers::grow_dendrites(net, cfg, 3);
    Rng rng(13);
    auto bank = make_candidates(net, cfg, rng);

    std::vector<oracle::Candidate> mirror;
    for (const auto& c : bank.pools()[0].all()) {
      oracle::Candidate o;
      o.w = c.weights;
      o.u = c.prior;
      o.b = c.bias;
      mirror.push_back(o);
    }
    double worst = 0.0;
    for (int batch = 0; batch < 100; ++batch) {
      const Tensor x = random_tensor(rng, {5, 4}, -2, 2);
      const auto y = random_labels(rng, 5, 3);
      Step s = forward_loss(net, x, y);
      const Gradients g = s.tape.backward(s.loss);
      cc_train_step(bank, net, s.tape, s.trace, g, cfg, 0.2);

      // Independent inputs: the raw batch, frozen dendrite outputs from the
      // registry, and deltas from the logits.
      const auto delta = output_deltas(net.predict(x), y);
      std::vector<std::vector<double>> rows(5, std::vector<double>(4));
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) rows[i][j] = x[i * 4 + j];
      for (std::size_t f = 0; f < 3; ++f) {
        std::vector<std::vector<double>> prior;
        if (levels) {
          const Tensor& w = net.parameter("dendrite.dense0.0.weight").value;
          const Tensor& b = net.parameter("dendrite.dense0.0.bias").value;
          std::vector<double> out(5);
          for (std::size_t i = 0; i < 5; ++i) {
            double z = b[f];
            for (std::size_t j = 0; j < 4; ++j) z += w[j * 3 + f] * rows[i][j];
            out[i] = std::tanh(z);
          }
          prior.push_back(out);
        }
        for (std::size_t p = 0; p < 2; ++p) {
          auto& o = mirror[f * 2 + p];
          oracle::correlation_step(o, rows, prior, delta[f], 0.9, 0.2);
          const auto& c = bank.pools()[0].at(f, p);
          for (std::size_t j = 0; j < 4; ++j) worst = std::max(worst, std::abs(c.weights[j] - o.w[j]));
          for (std::size_t d = 0; d < o.u.size(); ++d) worst = std::max(worst, std::abs(c.prior[d] - o.u[d]));
          worst = std::max({worst, std::abs(c.bias - o.b), std::abs(c.corr_ema - o.corr),
                            std::abs(c.avg_activation - o.avg_g), std::abs(c.avg_error - o.avg_delta)});
          CHECK(c.sigma == o.sigma);
        }
      }
    }
    CAPTURE(levels);
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("conv candidates see one sample per (image, position)") {
  Network net = build_network(conv_spec(), 2);
  DendriteConfig cfg;
  cfg.perforate_target = PerforateTarget::LinearAndConv;
  perforate(net, cfg);
  Rng rng(4);
  auto bank = make_candidates(net, cfg, rng);
  const Tensor x = random_tensor(rng, {2, 2, 6, 6});
  const auto y = random_labels(rng, 2, 3);
  Step s = forward_loss(net, x, y);
  const Gradients g = s.tape.backward(s.loss);
  const LayerTap& tap = s.trace.taps.at(0);
  REQUIRE(net.layers()[tap.layer].kind == LayerKind::Conv2d);
  const LayerBatch lb = gather_layer_batch(net, s.tape, tap, g);
  CHECK(lb.samples == 2 * 4 * 4);
  CHECK(lb.fan_in == 2 * 9);
  // patch of image 1 at output position (2, 3), channel 1, kernel offset (1, 2)
  const std::size_t row = 1 * 16 + 2 * 4 + 3, col = 1 * 9 + 1 * 3 + 2;
  CHECK(lb.inputs[row * lb.fan_in + col] == x[((1 * 2 + 1) * 6 + 3) * 6 + 5]);
  // conv pre-activation per (image, position) equals the patch dot kernel
  const Tensor& w = net.parameters()[net.layers()[tap.layer].weight].value;
  const Tensor& b = net.parameters()[net.layers()[tap.layer].bias].value;
  const Tensor& pre = s.tape.value(tap.preactivation);
  for (std::size_t f = 0; f < 3; ++f) {
    double z = b[f];
    for (std::size_t j = 0; j < lb.fan_in; ++j) z += w[f * lb.fan_in + j] * lb.inputs[row * lb.fan_in + j];
    CHECK(std::abs(pre[((1 * 3 + f) * 4 + 2) * 4 + 3] - z) <= 1e-12);
  }
  cc_train_step(bank, net, s.tape, s.trace, g, cfg, 0.1);
  for (const auto& c : bank.find(tap.layer)->all()) CHECK(c.updates == 1);
}

TEST_CASE("mean |corr| grows during candidate training (5 seeds)") {
  // Full-batch statistics: with small mini-batches the first-batch
  // covariance that seeds corr_ema carries sampling noise well above the
  // true covariance, so the start value would not be a fair baseline.
  double start = 0.0, end = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto data = two_spirals(60, 0.05, seed);
    std::vector<std::size_t> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const Tensor x = data.gather(idx);
    const auto y = data.gather_labels(idx);
    Network net = build_network(dense_spec(2, 2, 8, 2), seed);
    for (int epoch = 0; epoch < 50; ++epoch) {
      Step s = forward_loss(net, x, y);
      const Gradients g = s.tape.backward(s.loss);
      for (std::size_t p = 0; p < net.parameters().size(); ++p) {
        const Tensor grad = g.get(s.trace.params[p]);
        for (std::size_t i = 0; i < grad.size(); ++i) net.parameters()[p].value[i] -= 0.5 * grad[i];
      }
    }
    DendriteConfig cfg;
    cfg.ema_decay = 0.5;
    perforate(net, cfg);
    Rng rng(seed + 100);
    auto bank = make_candidates(net, cfg, rng);
    for (int step = 0; step < 100; ++step) {
      Step s = forward_loss(net, x, y);
      const Gradients g = s.tape.backward(s.loss);
      cc_train_step(bank, net, s.tape, s.trace, g, cfg, 0.5);
      if (step == 0) start += bank.mean_abs_correlation();
    }
    end += bank.mean_abs_correlation();
  }
  MESSAGE("mean |corr| start " << start / 5 << " end " << end / 5);
  CHECK(end > start);
}

TEST_CASE("GD step: zero task gradient leaves candidates unchanged") {
  Network net = build_network(dense_spec(3, 2, 4, 2), 1);
  DendriteConfig cfg;
  cfg.mode = DendriteMode::GD;
  perforate(net, cfg);
  Rng rng(2);
  auto bank = make_candidates(net, cfg, rng);
  const auto copy = bank;
  const Tensor x = random_tensor(rng, {3, 3});
  Step s = forward_loss(net, x, {0, 1, 1}, &bank);
  std::vector<Shape> shapes;
  for (std::size_t i = 0; i < s.tape.size(); ++i) shapes.push_back(s.tape.value(NodeId{static_cast<std::uint32_t>(i)}).shape());
  const Gradients zero(std::vector<std::optional<Tensor>>(s.tape.size()), shapes);
  for (const auto& tap : s.trace.taps) gd_dendrite_step(*bank.find(tap.layer), net, tap, zero, cfg, 0.5);
  for (std::size_t p = 0; p < bank.pools().size(); ++p)
    for (std::size_t i = 0; i < bank.pools()[p].all().size(); ++i) {
      const auto& a = bank.pools()[p].all()[i];
      const auto& b = copy.pools()[p].all()[i];
      CHECK(a.weights == b.weights);
      CHECK(a.bias == b.bias);
      CHECK(a.output == b.output);
    }
}

TEST_CASE("GD step: update equals -lr times the finite-difference gradient") {
  Network net = build_network(dense_spec(2, 1, 4, 2), 3);
  DendriteConfig cfg;
  cfg.mode = DendriteMode::GD;
  cfg.candidate_pool = 1;
  cfg.init_magnitude = 0.4;
  perforate(net, cfg);
  Rng rng(4);
  auto bank = make_candidates(net, cfg, rng);
  const Tensor x = random_tensor(rng, {4, 2});
  const std::vector<std::size_t> y{0, 1, 1, 0};
  auto loss_with = [&](const CandidateBank& b) {
    Step s = forward_loss(net, x, y, &b);
    return s.tape.value(s.loss)[0];
  };
  const double lr = 0.1, eps = 1e-5;
  auto updated = bank;
  {
    Step s = forward_loss(net, x, y, &bank);
    const Gradients g = s.tape.backward(s.loss);
    gd_dendrite_step(updated.pools()[0], net, s.trace.taps[0], g, cfg, lr);
  }
  double worst = 0.0;
  for (std::size_t f = 0; f < 2; ++f) {
    auto probe = [&](auto&& field) {
      auto up = bank, down = bank;
      field(up.pools()[0].at(f, 0)) += eps;
      field(down.pools()[0].at(f, 0)) -= eps;
      const double numeric = (loss_with(up) - loss_with(down)) / (2 * eps);
      const double step = field(updated.pools()[0].at(f, 0)) - field(bank.pools()[0].at(f, 0));
      worst = std::max(worst, std::abs(step - (-lr * numeric)) / (std::abs(lr * numeric) + 1e-12));
    };
    probe([](DendriteCandidate& c) -> double& { return c.weights[0]; });
    probe([](DendriteCandidate& c) -> double& { return c.weights[1]; });
    probe([](DendriteCandidate& c) -> double& { return c.bias; });
    probe([](DendriteCandidate& c) -> double& { return c.output; });
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("GD candidates pass no gradient to earlier layers or to neuron weights through their inputs") {
  Network net = build_network(dense_spec(3, 2, 4, 2), 5);
  DendriteConfig cfg;
  cfg.mode = DendriteMode::GD;
  cfg.max_dendrites = 2;
  perforate(net, cfg);
  testing_helpers::grow_dendrites(net, cfg, 1);
  Rng rng(6);
  auto bank = make_candidates(net, cfg, rng);
  const Tensor x = random_tensor(rng, {3, 3});
  Tape tape;
  ForwardOptions o;
  o.candidates = &bank;
  const Trace tr = net.forward(tape, x, o);
  // Loss that depends on the network only through candidate activations.
  NodeId loss = tape.leaf(Tensor::scalar(0.0), false);
  for (const auto& tap : tr.taps)
    for (const auto& ct : tap.candidates) loss = tape.add(loss, tape.sum(tape.mul(ct.activation, ct.activation)));
  const Gradients g = tape.backward(loss);
  for (std::size_t p = 0; p < net.parameters().size(); ++p) {
    const Tensor grad = g.get(tr.params[p]);
    for (double v : grad.data()) CHECK(v == 0.0);
  }
  double mx = 0.0;
  for (const auto& tap : tr.taps)
    for (const auto& ct : tap.candidates) {
      const Tensor gw = g.get(ct.weight);
      for (double v : gw.data()) mx = std::max(mx, std::abs(v));
    }
  CHECK(mx > 0.0);
}

TEST_CASE("gd_dendrite_step is refused in CC mode") {
  Network net = build_network(dense_spec(3, 1, 4, 2), 5);
  DendriteConfig cfg;
  cfg.mode = DendriteMode::GD;
  perforate(net, cfg);
  Rng rng(6);
  auto bank = make_candidates(net, cfg, rng);
  Step s = forward_loss(net, random_tensor(rng, {2, 3}), {0, 1}, &bank);
  const Gradients g = s.tape.backward(s.loss);
  DendriteConfig cc = cfg;
  cc.mode = DendriteMode::CC;
  CHECK_THROWS_AS(gd_dendrite_step(bank.pools()[0], net, s.trace.taps[0], g, cc, 0.1), StateError);
}

TEST_CASE("DendriteConfig validation") {
  DendriteConfig c;
  CHECK_NOTHROW(c.validate());
  c.max_dendrites = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.ema_decay = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.candidate_pool = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
