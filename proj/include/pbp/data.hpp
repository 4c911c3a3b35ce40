// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pbp/mfcc.hpp"
#include "pbp/rng.hpp"
#include "pbp/tensor.hpp"

namespace pbp {

enum class Split : std::uint8_t { Unassigned, Train, Val, Test };

std::string_view split_name(Split s);

struct LabeledDataset {
  std::string kind;  // "keywords" or "spirals"
  Tensor features;   // (N, ...)
  std::vector<std::size_t> labels;
  std::vector<Split> splits;  // parallel to labels
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
  /// Generator settings as JSON text, carried into meta.json.
  std::string generator;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  Shape sample_shape() const { return {features.shape().begin() + 1, features.shape().end()}; }
  std::vector<std::size_t> indices(Split s) const;
  /// Features of the given samples stacked along the batch axis.
  Tensor gather(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> gather_labels(std::span<const std::size_t> rows) const;
  /// Throws ConfigError on inconsistent sizes or labels out of range.
  void validate() const;
};

// ---- keywords ----

struct AudioClip {
  std::vector<double> samples;
  std::size_t sample_rate = 16000;
};

inline constexpr std::size_t kClipSamples = 16000;
inline constexpr std::size_t kMaxShift = 1280;  // 80 ms

/// One keyword utterance of class `k`: a 0.5 s chirp with a class-specific
/// base frequency (300 + 150k Hz), sweep, harmonic mix and envelope, centred
/// at 0.5 s + shift, plus uniform noise in +-noise_level, clipped to [-1, 1].
/// Draws from `rng` only when noise_level > 0.
AudioClip keyword_clip(std::size_t k, long shift, double noise_level, Rng& rng);

struct KeywordSample {
  AudioClip clip;
  std::size_t label = 0;
};

/// Class-major list of clips with random shifts in +-80 ms. Throws ConfigError if classes < 2.
std::vector<KeywordSample> gen_keywords(std::size_t n_per_class, std::size_t classes, double noise_level,
                                        std::uint64_t seed);

/// gen_keywords followed by MFCC; features (N, 1, n_coefficients, n_frames).
LabeledDataset keywords_dataset(std::size_t n_per_class, std::size_t classes, double noise_level,
                                std::uint64_t seed, const MfccConfig& mfcc = {});

// ---- spirals ----

/// Two interleaved spirals in [-1,1]^2 (before jitter); spiral B is the point
/// reflection of spiral A. Features (2n, 2): the n points of A, then B.
LabeledDataset two_spirals(std::size_t n_per_class, double noise_std, std::uint64_t seed);

// ---- splits ----

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// Stratified, seeded assignment. Split sizes are round(N*train),
/// round(N*val) and the remainder; every class is spread evenly over the
/// three. Throws ConfigError on bad ratios or an empty split.
LabeledDataset split(const LabeledDataset& data, SplitRatios ratios, std::uint64_t seed);

// ---- storage ----

/// Writes meta.json, features.bin and labels.csv into `dir`, which must exist.
void save_dataset(const LabeledDataset& data, const std::filesystem::path& dir);
LabeledDataset load_dataset(const std::filesystem::path& dir);

}  // namespace pbp
