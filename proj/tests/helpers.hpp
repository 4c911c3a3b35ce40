// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "pbp/data.hpp"
#include "pbp/layers.hpp"
#include "pbp/perforation.hpp"
#include "pbp/rng.hpp"

namespace testing_helpers {

inline pbp::Tensor random_tensor(pbp::Rng& rng, pbp::Shape shape, double lo = -1.0, double hi = 1.0) {
  pbp::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<std::size_t> random_labels(pbp::Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = static_cast<std::size_t>(rng.below(classes));
  return y;
}

/// Freezes one dendrite level into every perforated layer, with candidates
/// given a single synthetic statistics update so selection is defined.
inline void grow_dendrites(pbp::Network& net, const pbp::DendriteConfig& config, std::uint64_t seed) {
  pbp::Rng rng(seed);
  auto bank = pbp::make_candidates(net, config, rng);
  for (auto& pool : bank.pools()) {
    for (auto& c : pool.all()) {
      const std::vector<double> g{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      const std::vector<double> d{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      pbp::update_statistics(c, g, d, config.ema_decay);
    }
  }
  pbp::select_and_freeze(net, bank, config);
}

}  // namespace testing_helpers
