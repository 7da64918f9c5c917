// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "zsu/tensor.hpp"

namespace zsu::dsp {

struct AudioBuffer {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  int sample_rate = 16000;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

enum class WindowKind { Hann, Rectangular };

struct StftConfig {
  std::int64_t fft_size = 2048;  // power of two
  std::int64_t window_length = 400;
  std::int64_t hop_length = 160;
  WindowKind window = WindowKind::Hann;

  void validate() const;
  std::int64_t num_bins() const { return fft_size / 2 + 1; }
  // 25 ms window / 10 ms hop at the given rate.
  static StftConfig for_sample_rate(int sample_rate);
};

struct Spectrogram {
  // frames: T_s x num_bins.  Exactly one of the two representations is used.
  std::vector<std::vector<std::complex<double>>> complex_frames;
  Tensor magnitude;  // T_s x num_bins, elementwise >= 0
  StftConfig config;
  int sample_rate = 16000;

  bool is_complex() const { return !complex_frames.empty(); }
  std::int64_t num_frames() const {
    return is_complex() ? static_cast<std::int64_t>(complex_frames.size())
                        : magnitude.rows();
  }
  Tensor to_magnitude() const;
};

enum class FeatureKind { Mfcc39, Mel80, Linear, Custom };

std::string feature_kind_name(FeatureKind k);
FeatureKind feature_kind_from_name(const std::string &name);

struct FeatureSequence {
  Tensor frames;  // T x D
  FeatureKind kind = FeatureKind::Custom;
  double frame_rate = 100.0;  // frames per second
};

// In-place radix-2 FFT over a power-of-two length buffer.
void fft(std::vector<std::complex<double>> &a, bool inverse);

std::vector<double> make_window(WindowKind kind, std::int64_t length);

// Frame count: 1 + floor((len - window) / hop); no centering, no padding.
Spectrogram stft(const AudioBuffer &audio, const StftConfig &cfg);

// Least-squares overlap-add inversion (synthesis window = analysis window,
// normalized by the squared window sum envelope).
AudioBuffer istft(const Spectrogram &spec, const StftConfig &cfg);

// Triangular mel filters spanning 0..Nyquist; returns n_mels x (fft/2+1).
Tensor mel_filterbank(std::int64_t n_mels, const StftConfig &cfg,
                      int sample_rate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Log-mel energies (power spectrum, floor before log): T x n_mels.
FeatureSequence log_mel(const AudioBuffer &audio, const StftConfig &cfg,
                        std::int64_t n_mels);

// Regression deltas with half-width n and edge replication.
Tensor deltas(const Tensor &features, std::int64_t half_width);

// 13 orthonormal DCT-II coefficients of log-mel energies (c0 retained),
// concatenated with delta and delta-delta: T x 39.
FeatureSequence mfcc(const AudioBuffer &audio, const StftConfig &cfg);

struct GriffinLimResult {
  AudioBuffer audio;
  std::vector<double> convergence;  // ||  |STFT(x_k)| - M  ||_F per iteration
};

GriffinLimResult griffin_lim(const Spectrogram &magnitude,
                             const StftConfig &cfg, std::int64_t iterations,
                             std::uint64_t seed);

// Linear-interpolation resampler used on WAV ingest.
AudioBuffer resample(const AudioBuffer &audio, int target_rate);

constexpr std::int64_t kMfccCoeffs = 13;
constexpr std::int64_t kMfccDims = 39;
constexpr std::int64_t kMelDims = 80;
constexpr double kLogFloor = 1e-10;
constexpr std::int64_t kDeltaHalfWidth = 2;

}  // namespace zsu::dsp
