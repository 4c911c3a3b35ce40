// SPDX-License-Identifier: Apache-2.0
#include "pbp/mfcc.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <string>

#include "pbp/error.hpp"

namespace pbp {

void MfccConfig::validate() const {
  if (sample_rate == 0 || frame_length == 0 || frame_step == 0) {
    throw ConfigError("mfcc: sample_rate, frame_length and frame_step must be positive");
  }
  if (frame_step > frame_length) throw ConfigError("mfcc: frame_step must not exceed frame_length");
  if (fft_size < frame_length) throw ConfigError("mfcc: fft_size must be >= frame_length");
  if (n_mel_filters == 0 || n_coefficients == 0 || n_coefficients > n_mel_filters) {
    throw ConfigError("mfcc: need 1 <= n_coefficients <= n_mel_filters");
  }
  if (!(low_hz >= 0.0 && low_hz < high_hz && high_hz <= 0.5 * static_cast<double>(sample_rate))) {
    throw ConfigError("mfcc: need 0 <= low_hz < high_hz <= sample_rate/2");
  }
  if (!(log_floor > 0.0)) throw ConfigError("mfcc: log_floor must be positive");
}

std::size_t MfccConfig::frames(std::size_t samples) const {
  return samples < frame_length ? 0 : 1 + (samples - frame_length) / frame_step;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// Band edges: n_mel_filters + 2 points evenly spaced on the mel scale.
std::vector<double> mel_points(const MfccConfig& c) {
  const double lo = hz_to_mel(c.low_hz), hi = hz_to_mel(c.high_hz);
  std::vector<double> hz(c.n_mel_filters + 2);
  for (std::size_t i = 0; i < hz.size(); ++i) {
    hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(c.n_mel_filters + 1));
  }
  return hz;
}

// FFTW's planner is not reentrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::vector<double> mel_centers(const MfccConfig& config) {
  const auto pts = mel_points(config);
  return {pts.begin() + 1, pts.end() - 1};
}

std::vector<double> dct2(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += x[i] * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) /
                           (2.0 * static_cast<double>(n)));
    }
    out[k] = s * std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
  }
  return out;
}

std::vector<double> idct2(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      s += x[k] * std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n)) *
           std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) /
                    (2.0 * static_cast<double>(n)));
    }
    out[i] = s;
  }
  return out;
}

struct MfccExtractor::Plan {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  explicit Plan(std::size_t n) {
    std::lock_guard lock(planner_mutex());
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    if (!in || !out) throw Error("mfcc: fft buffer allocation failed");
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
    if (!plan) throw Error("mfcc: fft plan creation failed");
  }
  ~Plan() {
    std::lock_guard lock(planner_mutex());
    if (plan) fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
};

MfccExtractor::MfccExtractor(MfccConfig config) : config_(config) {
  config_.validate();
  const std::size_t bins = config_.fft_size / 2 + 1;
  const auto pts = mel_points(config_);
  filters_.assign(config_.n_mel_filters, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < config_.n_mel_filters; ++m) {
    const double left = pts[m], centre = pts[m + 1], right = pts[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * static_cast<double>(config_.sample_rate) /
                       static_cast<double>(config_.fft_size);
      if (f > left && f < right) filters_[m][k] = f <= centre ? (f - left) / (centre - left) : (right - f) / (right - centre);
    }
  }
  plan_ = std::make_unique<Plan>(config_.fft_size);
}

MfccExtractor::~MfccExtractor() = default;
MfccExtractor::MfccExtractor(MfccExtractor&&) noexcept = default;
MfccExtractor& MfccExtractor::operator=(MfccExtractor&&) noexcept = default;

Tensor MfccExtractor::mel_energies(std::span<const double> clip) {
  const auto& c = config_;
  const std::size_t n_frames = c.frames(clip.size());
  if (n_frames == 0) {
    throw ShapeError("mfcc: clip of " + std::to_string(clip.size()) + " samples is shorter than one frame (" +
                     std::to_string(c.frame_length) + ")");
  }
  std::vector<double> emphasised(clip.size());
  emphasised[0] = clip[0];
  for (std::size_t i = 1; i < clip.size(); ++i) emphasised[i] = clip[i] - c.pre_emphasis * clip[i - 1];

  std::vector<double> window(c.frame_length);
  for (std::size_t i = 0; i < c.frame_length; ++i) {
    window[i] = c.frame_length == 1 ? 1.0
                                    : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                             static_cast<double>(c.frame_length - 1));
  }

  const std::size_t bins = c.fft_size / 2 + 1;
  std::vector<double> magnitude(bins);
  Tensor energies({n_frames, c.n_mel_filters});
  for (std::size_t t = 0; t < n_frames; ++t) {
    const double* frame = emphasised.data() + t * c.frame_step;
    for (std::size_t i = 0; i < c.fft_size; ++i) plan_->in[i] = i < c.frame_length ? frame[i] * window[i] : 0.0;
    fftw_execute(plan_->plan);
    for (std::size_t k = 0; k < bins; ++k) magnitude[k] = std::hypot(plan_->out[k][0], plan_->out[k][1]);
    for (std::size_t m = 0; m < c.n_mel_filters; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += filters_[m][k] * magnitude[k];
      energies[t * c.n_mel_filters + m] = e;
    }
  }
  return energies;
}

Tensor MfccExtractor::operator()(std::span<const double> clip) {
  const auto& c = config_;
  const Tensor energies = mel_energies(clip);
  const std::size_t n_frames = energies.dim(0);
  Tensor out({c.n_coefficients, n_frames});
  std::vector<double> logmel(c.n_mel_filters);
  for (std::size_t t = 0; t < n_frames; ++t) {
    for (std::size_t m = 0; m < c.n_mel_filters; ++m) {
      logmel[m] = std::log(std::max(energies[t * c.n_mel_filters + m], c.log_floor));
    }
    const auto cep = dct2(logmel);
    for (std::size_t k = 0; k < c.n_coefficients; ++k) out[k * n_frames + t] = cep[k];
  }
  return out;
}

}  // namespace pbp
