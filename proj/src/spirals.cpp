// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "pbp/data.hpp"
#include "pbp/error.hpp"

namespace pbp {

LabeledDataset two_spirals(std::size_t n_per_class, double noise_std, std::uint64_t seed) {
  if (n_per_class == 0) throw ConfigError("two_spirals: n_per_class must be >= 1");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("two_spirals: noise_std must be >= 0");
  Rng rng(derive_seed(seed, stream::kData));
  const std::size_t n = n_per_class;
  LabeledDataset ds;
  ds.kind = "spirals";
  ds.seed = seed;
  ds.features = Tensor({2 * n, 2});
  ds.labels.assign(2 * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    // Classic 97-point parameterisation (t = 0..96), stretched to n points.
    const double t = n == 1 ? 0.0 : 96.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    const double angle = t * std::numbers::pi / 16.0;
    const double radius = (104.0 - t) / 104.0;
    const double x = radius * std::sin(angle), y = radius * std::cos(angle);
    const double ax = rng.normal() * noise_std, ay = rng.normal() * noise_std;
    const double bx = rng.normal() * noise_std, by = rng.normal() * noise_std;
    ds.features[2 * i] = x + ax;
    ds.features[2 * i + 1] = y + ay;
    ds.features[2 * (n + i)] = -x + bx;
    ds.features[2 * (n + i) + 1] = -y + by;
    ds.labels[n + i] = 1;
  }
  ds.splits.assign(2 * n, Split::Unassigned);
  ds.class_names = {"spiral_a", "spiral_b"};
  ds.generator = nlohmann::json{{"n_per_class", n_per_class}, {"noise_std", noise_std}}.dump();
  return ds;
}

}  // namespace pbp
