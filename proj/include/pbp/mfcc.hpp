// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "pbp/tensor.hpp"

namespace pbp {

struct MfccConfig {
  std::size_t sample_rate = 16000;
  std::size_t frame_length = 400;  // 25 ms
  std::size_t frame_step = 320;    // 20 ms
  std::size_t n_mel_filters = 26;
  std::size_t n_coefficients = 13;
  std::size_t fft_size = 512;
  double pre_emphasis = 0.97;
  double low_hz = 0.0;
  double high_hz = 8000.0;
  double log_floor = 0.1;  // magnitude units; keeps silent frames near the signal scale

  /// Throws ConfigError.
  void validate() const;
  /// 1 + floor((samples - frame_length) / frame_step); 0 if the clip is too short.
  std::size_t frames(std::size_t samples) const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Centre frequencies (Hz) of the triangular mel filters, ascending.
std::vector<double> mel_centers(const MfccConfig& config);

/// Orthonormal DCT-II and its inverse (DCT-III).
std::vector<double> dct2(std::span<const double> x);
std::vector<double> idct2(std::span<const double> x);

/// Owns an FFT plan; not shareable between threads (make one per thread).
class MfccExtractor {
 public:
  explicit MfccExtractor(MfccConfig config = {});
  ~MfccExtractor();
  MfccExtractor(const MfccExtractor&) = delete;
  MfccExtractor& operator=(const MfccExtractor&) = delete;
  MfccExtractor(MfccExtractor&&) noexcept;
  MfccExtractor& operator=(MfccExtractor&&) noexcept;

  const MfccConfig& config() const { return config_; }

  /// Linear filterbank energies, shape (n_frames, n_mel_filters).
  /// Throws ShapeError if the clip is shorter than one frame.
  Tensor mel_energies(std::span<const double> clip);
  /// Cepstral map, shape (n_coefficients, n_frames).
  Tensor operator()(std::span<const double> clip);

 private:
  struct Plan;
  MfccConfig config_;
  std::vector<std::vector<double>> filters_;  // [filter][fft bin]
  std::unique_ptr<Plan> plan_;
};

}  // namespace pbp
