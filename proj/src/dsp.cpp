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

#include "zsu/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace zsu::dsp {

namespace {
constexpr double kPi = std::numbers::pi;

bool is_power_of_two(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }
}  // namespace

void StftConfig::validate() const {
  if (!is_power_of_two(fft_size))
    throw ConfigError("StftConfig: fft_size must be a power of two");
  if (window_length <= 0 || hop_length <= 0)
    throw ConfigError("StftConfig: window and hop must be positive");
  if (hop_length > window_length || window_length > fft_size)
    throw ConfigError("StftConfig: need hop <= window <= fft_size");
}

StftConfig StftConfig::for_sample_rate(int sample_rate) {
  StftConfig cfg;
  cfg.window_length = sample_rate * 25 / 1000;
  cfg.hop_length = sample_rate * 10 / 1000;
  cfg.fft_size = 2048;
  while (cfg.fft_size < cfg.window_length) cfg.fft_size *= 2;
  cfg.window = WindowKind::Hann;
  return cfg;
}

Tensor Spectrogram::to_magnitude() const {
  if (!is_complex()) return magnitude;
  const std::int64_t t = num_frames();
  const std::int64_t bins = static_cast<std::int64_t>(complex_frames[0].size());
  Tensor mag({t, bins});
  for (std::int64_t i = 0; i < t; ++i)
    for (std::int64_t j = 0; j < bins; ++j)
      mag.at(i, j) = std::abs(complex_frames[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
  return mag;
}

std::string feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::Mfcc39: return "mfcc39";
    case FeatureKind::Mel80: return "mel80";
    case FeatureKind::Linear: return "linear";
    case FeatureKind::Custom: return "custom";
  }
  return "custom";
}

FeatureKind feature_kind_from_name(const std::string &name) {
  if (name == "mfcc39" || name == "mfcc") return FeatureKind::Mfcc39;
  if (name == "mel80" || name == "mel") return FeatureKind::Mel80;
  if (name == "linear") return FeatureKind::Linear;
  if (name == "custom") return FeatureKind::Custom;
  throw ConfigError("unknown feature kind: " + name);
}

void fft(std::vector<std::complex<double>> &a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_power_of_two(static_cast<std::int64_t>(n)))
    throw ConfigError("fft: length must be a power of two");
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto &x : a) x *= inv;
  }
}

std::vector<double> make_window(WindowKind kind, std::int64_t length) {
  std::vector<double> w(static_cast<std::size_t>(length), 1.0);
  if (kind == WindowKind::Hann) {
    // Periodic Hann.
    for (std::int64_t n = 0; n < length; ++n)
      w[static_cast<std::size_t>(n)] =
          0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(n) / static_cast<double>(length));
  }
  return w;
}

Spectrogram stft(const AudioBuffer &audio, const StftConfig &cfg) {
  cfg.validate();
  const std::int64_t len = static_cast<std::int64_t>(audio.samples.size());
  if (len < cfg.window_length)
    throw DataError("stft: audio shorter than one window");
  const std::int64_t frames = 1 + (len - cfg.window_length) / cfg.hop_length;
  const std::vector<double> window = make_window(cfg.window, cfg.window_length);
  const std::int64_t bins = cfg.num_bins();

  Spectrogram spec;
  spec.config = cfg;
  spec.sample_rate = audio.sample_rate;
  spec.complex_frames.resize(static_cast<std::size_t>(frames));
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
  for (std::int64_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const std::int64_t start = t * cfg.hop_length;
    for (std::int64_t n = 0; n < cfg.window_length; ++n)
      buf[static_cast<std::size_t>(n)] =
          audio.samples[static_cast<std::size_t>(start + n)] * window[static_cast<std::size_t>(n)];
    fft(buf, false);
    spec.complex_frames[static_cast<std::size_t>(t)].assign(
        buf.begin(), buf.begin() + bins);
  }
  return spec;
}

AudioBuffer istft(const Spectrogram &spec, const StftConfig &cfg) {
  cfg.validate();
  if (!spec.is_complex())
    throw DataError("istft: complex spectrogram required");
  if (spec.config.fft_size != cfg.fft_size ||
      spec.config.window_length != cfg.window_length ||
      spec.config.hop_length != cfg.hop_length)
    throw ConfigError("istft: config does not match spectrogram metadata");
  const std::int64_t frames = spec.num_frames();
  const std::int64_t bins = cfg.num_bins();
  const std::int64_t out_len = cfg.window_length + (frames - 1) * cfg.hop_length;
  const std::vector<double> window = make_window(cfg.window, cfg.window_length);

  std::vector<double> acc(static_cast<std::size_t>(out_len), 0.0);
  std::vector<double> wsum(static_cast<std::size_t>(out_len), 0.0);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
  for (std::int64_t t = 0; t < frames; ++t) {
    const auto &frame = spec.complex_frames[static_cast<std::size_t>(t)];
    if (static_cast<std::int64_t>(frame.size()) != bins)
      throw DataError("istft: frame bin count mismatch");
    // Rebuild the full conjugate-symmetric spectrum.
    for (std::int64_t j = 0; j < bins; ++j)
      buf[static_cast<std::size_t>(j)] = frame[static_cast<std::size_t>(j)];
    for (std::int64_t j = bins; j < cfg.fft_size; ++j)
      buf[static_cast<std::size_t>(j)] =
          std::conj(frame[static_cast<std::size_t>(cfg.fft_size - j)]);
    fft(buf, true);
    const std::int64_t start = t * cfg.hop_length;
    for (std::int64_t n = 0; n < cfg.window_length; ++n) {
      const double w = window[static_cast<std::size_t>(n)];
      acc[static_cast<std::size_t>(start + n)] += w * buf[static_cast<std::size_t>(n)].real();
      wsum[static_cast<std::size_t>(start + n)] += w * w;
    }
  }
  AudioBuffer out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(static_cast<std::size_t>(out_len));
  for (std::int64_t n = 0; n < out_len; ++n) {
    const double d = wsum[static_cast<std::size_t>(n)];
    out.samples[static_cast<std::size_t>(n)] =
        d > 1e-12 ? acc[static_cast<std::size_t>(n)] / d : 0.0;
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor mel_filterbank(std::int64_t n_mels, const StftConfig &cfg,
                      int sample_rate) {
  cfg.validate();
  if (n_mels < 1) throw ConfigError("mel_filterbank: n_mels must be >= 1");
  const std::int64_t bins = cfg.num_bins();
  if (n_mels > bins)
    throw ConfigError("mel_filterbank: n_mels exceeds bin count");
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  // n_mels + 2 equally spaced mel points define the triangle edges.
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (std::int64_t i = 0; i < n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mels + 1));

  Tensor fb({n_mels, bins});
  for (std::int64_t m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m + 1)];
    const double hi = edges[static_cast<std::size_t>(m + 2)];
    for (std::int64_t j = 0; j < bins; ++j) {
      const double f = static_cast<double>(j) * sample_rate / static_cast<double>(cfg.fft_size);
      double w = 0.0;
      if (f > lo && f < hi)
        w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      fb.at(m, j) = w;
    }
  }
  return fb;
}

FeatureSequence log_mel(const AudioBuffer &audio, const StftConfig &cfg,
                        std::int64_t n_mels) {
  const Spectrogram spec = stft(audio, cfg);
  const Tensor mag = spec.to_magnitude();
  const Tensor fb = mel_filterbank(n_mels, cfg, audio.sample_rate);
  const std::int64_t t_s = mag.rows();
  const std::int64_t bins = mag.cols();
  FeatureSequence out;
  out.frames = Tensor({t_s, n_mels});
  out.kind = n_mels == kMelDims ? FeatureKind::Mel80 : FeatureKind::Custom;
  out.frame_rate = static_cast<double>(audio.sample_rate) / static_cast<double>(cfg.hop_length);
  for (std::int64_t t = 0; t < t_s; ++t)
    for (std::int64_t m = 0; m < n_mels; ++m) {
      double e = 0.0;
      for (std::int64_t j = 0; j < bins; ++j) {
        const double v = mag.at(t, j);
        e += fb.at(m, j) * v * v;  // power spectrum
      }
      out.frames.at(t, m) = std::log(std::max(e, kLogFloor));
    }
  return out;
}

Tensor deltas(const Tensor &features, std::int64_t half_width) {
  const std::int64_t t_len = features.rows();
  const std::int64_t d = features.cols();
  if (t_len < 1) throw DataError("deltas: empty feature matrix");
  Tensor out({t_len, d});
  double denom = 0.0;
  for (std::int64_t n = 1; n <= half_width; ++n) denom += static_cast<double>(n * n);
  denom *= 2.0;
  auto clamp_t = [&](std::int64_t t) { return std::clamp<std::int64_t>(t, 0, t_len - 1); };
  for (std::int64_t t = 0; t < t_len; ++t)
    for (std::int64_t j = 0; j < d; ++j) {
      double num = 0.0;
      for (std::int64_t n = 1; n <= half_width; ++n)
        num += static_cast<double>(n) *
               (features.at(clamp_t(t + n), j) - features.at(clamp_t(t - n), j));
      out.at(t, j) = num / denom;
    }
  return out;
}

FeatureSequence mfcc(const AudioBuffer &audio, const StftConfig &cfg) {
  const FeatureSequence lm = log_mel(audio, cfg, kMelDims);
  const std::int64_t t_s = lm.frames.rows();
  const std::int64_t n_mels = lm.frames.cols();

  // Orthonormal DCT-II over the mel axis, keep c0..c12.
  Tensor cep({t_s, kMfccCoeffs});
  const double scale0 = std::sqrt(1.0 / static_cast<double>(n_mels));
  const double scale = std::sqrt(2.0 / static_cast<double>(n_mels));
  for (std::int64_t t = 0; t < t_s; ++t)
    for (std::int64_t k = 0; k < kMfccCoeffs; ++k) {
      double s = 0.0;
      for (std::int64_t m = 0; m < n_mels; ++m)
        s += lm.frames.at(t, m) *
             std::cos(kPi * static_cast<double>(k) * (2.0 * static_cast<double>(m) + 1.0) /
                      (2.0 * static_cast<double>(n_mels)));
      cep.at(t, k) = s * (k == 0 ? scale0 : scale);
    }

  const Tensor d1 = deltas(cep, kDeltaHalfWidth);
  const Tensor d2 = deltas(d1, kDeltaHalfWidth);

  FeatureSequence out;
  out.kind = FeatureKind::Mfcc39;
  out.frame_rate = lm.frame_rate;
  out.frames = Tensor({t_s, kMfccDims});
  for (std::int64_t t = 0; t < t_s; ++t)
    for (std::int64_t k = 0; k < kMfccCoeffs; ++k) {
      out.frames.at(t, k) = cep.at(t, k);
      out.frames.at(t, k + kMfccCoeffs) = d1.at(t, k);
      out.frames.at(t, k + 2 * kMfccCoeffs) = d2.at(t, k);
    }
  return out;
}

GriffinLimResult griffin_lim(const Spectrogram &magnitude,
                             const StftConfig &cfg, std::int64_t iterations,
                             std::uint64_t seed) {
  cfg.validate();
  if (iterations < 1) throw ConfigError("griffin_lim: iterations must be >= 1");
  const Tensor mag = magnitude.to_magnitude();
  if (!mag.all_finite())
    throw DataError("griffin_lim: non-finite magnitudes");
  for (std::int64_t i = 0; i < mag.numel(); ++i)
    if (mag[i] < 0.0) throw DataError("griffin_lim: negative magnitude");

  const std::int64_t frames = mag.rows();
  const std::int64_t bins = mag.cols();
  if (bins != cfg.num_bins())
    throw ConfigError("griffin_lim: magnitude bin count does not match config");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-kPi, kPi);
  Spectrogram current;
  current.config = cfg;
  current.sample_rate = magnitude.sample_rate;
  current.complex_frames.resize(static_cast<std::size_t>(frames));
  for (std::int64_t t = 0; t < frames; ++t) {
    auto &frame = current.complex_frames[static_cast<std::size_t>(t)];
    frame.resize(static_cast<std::size_t>(bins));
    for (std::int64_t j = 0; j < bins; ++j) {
      const double phase = uni(rng);
      frame[static_cast<std::size_t>(j)] =
          std::polar(mag.at(t, j), phase);
    }
  }

  GriffinLimResult result;
  AudioBuffer x;
  for (std::int64_t it = 0; it < iterations; ++it) {
    x = istft(current, cfg);
    const Spectrogram projected = stft(x, cfg);
    double err = 0.0;
    for (std::int64_t t = 0; t < frames; ++t) {
      const auto &frame = projected.complex_frames[static_cast<std::size_t>(t)];
      for (std::int64_t j = 0; j < bins; ++j) {
        const double diff = std::abs(frame[static_cast<std::size_t>(j)]) - mag.at(t, j);
        err += diff * diff;
      }
    }
    result.convergence.push_back(std::sqrt(err));
    // Keep the projected phase, restore the target magnitude.
    for (std::int64_t t = 0; t < frames; ++t) {
      const auto &pf = projected.complex_frames[static_cast<std::size_t>(t)];
      auto &cf = current.complex_frames[static_cast<std::size_t>(t)];
      for (std::int64_t j = 0; j < bins; ++j) {
        const std::complex<double> v = pf[static_cast<std::size_t>(j)];
        const double a = std::abs(v);
        cf[static_cast<std::size_t>(j)] =
            a > 1e-300 ? v / a * mag.at(t, j)
                       : std::complex<double>(mag.at(t, j), 0.0);
      }
    }
  }
  x = istft(current, cfg);
  result.audio = x;
  return result;
}

AudioBuffer resample(const AudioBuffer &audio, int target_rate) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be positive");
  if (audio.sample_rate == target_rate) return audio;
  AudioBuffer out;
  out.sample_rate = target_rate;
  const double ratio = static_cast<double>(audio.sample_rate) / target_rate;
  const std::int64_t n_in = static_cast<std::int64_t>(audio.samples.size());
  const std::int64_t n_out =
      static_cast<std::int64_t>(std::floor(static_cast<double>(n_in - 1) / ratio)) + 1;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * ratio;
    const std::int64_t lo = static_cast<std::int64_t>(std::floor(pos));
    const std::int64_t hi = std::min<std::int64_t>(lo + 1, n_in - 1);
    const double frac = pos - static_cast<double>(lo);
    out.samples[static_cast<std::size_t>(i)] =
        (1.0 - frac) * audio.samples[static_cast<std::size_t>(lo)] +
        frac * audio.samples[static_cast<std::size_t>(hi)];
  }
  return out;
}

}  // namespace zsu::dsp
