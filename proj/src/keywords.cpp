// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "pbp/data.hpp"
#include "pbp/error.hpp"

namespace pbp {

AudioClip keyword_clip(std::size_t k, long shift, double noise_level, Rng& rng) {
  constexpr double kRate = 16000.0;
  constexpr std::size_t kWord = 8000;  // 0.5 s
  constexpr double kPeak = 0.6;
  const double duration = static_cast<double>(kWord) / kRate;
  const double f0 = 300.0 + 150.0 * static_cast<double>(k);
  const double sweep = 200.0 * (static_cast<double>(k % 4) - 1.5);
  const double harmonic = 0.2 + 0.15 * static_cast<double>(k % 3);
  const double env_power = 1.0 + static_cast<double>(k % 3);

  AudioClip clip;
  clip.samples.assign(kClipSamples, 0.0);
  const long start = static_cast<long>(kClipSamples / 2) + shift - static_cast<long>(kWord / 2);
  for (std::size_t i = 0; i < kWord; ++i) {
    const long pos = start + static_cast<long>(i);
    if (pos < 0 || pos >= static_cast<long>(kClipSamples)) continue;
    const double t = static_cast<double>(i) / kRate;
    const double tau = t / duration;
    // Instantaneous frequency f0 + sweep * (tau - 1/2), integrated.
    const double phase = 2.0 * std::numbers::pi * (f0 * t + sweep * (t * t / (2.0 * duration) - t / 2.0));
    const double env = std::pow(std::sin(std::numbers::pi * tau), env_power);
    clip.samples[static_cast<std::size_t>(pos)] =
        kPeak * env * (std::sin(phase) + harmonic * std::sin(2.0 * phase)) / (1.0 + harmonic);
  }
  if (noise_level > 0.0) {
    for (auto& s : clip.samples) s += rng.uniform(-noise_level, noise_level);
  }
  for (auto& s : clip.samples) s = std::clamp(s, -1.0, 1.0);
  return clip;
}

std::vector<KeywordSample> gen_keywords(std::size_t n_per_class, std::size_t classes, double noise_level,
                                        std::uint64_t seed) {
  if (classes < 2) throw ConfigError("gen_keywords: need at least 2 classes");
  if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) throw ConfigError("gen_keywords: noise_level must be >= 0");
  Rng rng(derive_seed(seed, stream::kData));
  std::vector<KeywordSample> out;
  out.reserve(n_per_class * classes);
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t j = 0; j < n_per_class; ++j) {
      const long shift = static_cast<long>(rng.below(2 * kMaxShift + 1)) - static_cast<long>(kMaxShift);
      out.push_back({keyword_clip(k, shift, noise_level, rng), k});
    }
  }
  return out;
}

LabeledDataset keywords_dataset(std::size_t n_per_class, std::size_t classes, double noise_level,
                                std::uint64_t seed, const MfccConfig& mfcc) {
  const auto clips = gen_keywords(n_per_class, classes, noise_level, seed);
  MfccExtractor extract(mfcc);
  const std::size_t coeffs = mfcc.n_coefficients, frames = mfcc.frames(kClipSamples);
  LabeledDataset ds;
  ds.kind = "keywords";
  ds.seed = seed;
  ds.features = Tensor({clips.size(), 1, coeffs, frames});
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const Tensor map = extract(clips[i].clip.samples);
    std::copy(map.data().begin(), map.data().end(), ds.features.data().begin() + i * coeffs * frames);
    ds.labels.push_back(clips[i].label);
  }
  ds.splits.assign(ds.labels.size(), Split::Unassigned);
  for (std::size_t k = 0; k < classes; ++k) ds.class_names.push_back("kw" + std::to_string(k));
  ds.generator = nlohmann::json{{"n_per_class", n_per_class},
                                {"classes", classes},
                                {"noise_level", noise_level},
                                {"mfcc",
                                 {{"sample_rate", mfcc.sample_rate},
                                  {"frame_length", mfcc.frame_length},
                                  {"frame_step", mfcc.frame_step},
                                  {"n_mel_filters", mfcc.n_mel_filters},
                                  {"n_coefficients", mfcc.n_coefficients},
                                  {"fft_size", mfcc.fft_size},
                                  {"pre_emphasis", mfcc.pre_emphasis},
                                  {"low_hz", mfcc.low_hz},
                                  {"high_hz", mfcc.high_hz},
                                  {"log_floor", mfcc.log_floor}}}}
                     .dump();
  return ds;
}

}  // namespace pbp
