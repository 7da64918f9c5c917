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

// Shared helpers for the test suites: synthetic corpora and scratch dirs.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "zsu/corpus.hpp"
#include "zsu/dsp.hpp"
#include "zsu/tensor.hpp"

namespace zsu::test {

inline std::filesystem::path scratch_dir(const std::string &name) {
  const auto dir = std::filesystem::temp_directory_path() / ("zsu_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Harmonic tone with a per-speaker spectral tilt: partials of f0 whose
// amplitudes fall off as (k+1)^-tilt, lightly amplitude-modulated so frames
// are not all identical.  A crude stand-in for a voiced utterance.
inline dsp::AudioBuffer make_tone(double f0, double seconds, double tilt,
                                  std::uint64_t seed, int sample_rate = 16000) {
  dsp::AudioBuffer audio;
  audio.sample_rate = sample_rate;
  const auto n = static_cast<std::size_t>(seconds * sample_rate);
  audio.samples.resize(n, 0.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * M_PI);
  const int harmonics = 8;
  std::vector<double> phases;
  for (int k = 0; k < harmonics; ++k) phases.push_back(phase_dist(rng));
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    double v = 0.0;
    for (int k = 0; k < harmonics; ++k) {
      const double freq = f0 * (k + 1);
      if (freq >= sample_rate / 2.0) break;
      v += std::pow(k + 1.0, -tilt) * std::sin(2.0 * M_PI * freq * t + phases[k]);
    }
    const double envelope = 0.6 + 0.4 * std::sin(2.0 * M_PI * 3.0 * t);
    audio.samples[i] = 0.25 * envelope * v;
  }
  return audio;
}

// A speech-like test signal: a sequence of tone segments with moving f0,
// used where a recorded utterance would otherwise be needed.
inline dsp::AudioBuffer make_speechlike(double seconds, std::uint64_t seed,
                                        int sample_rate = 16000) {
  const double segment = 0.15;
  const int nseg = static_cast<int>(seconds / segment);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> f0_dist(110.0, 320.0);
  std::uniform_real_distribution<double> tilt_dist(0.8, 2.0);
  dsp::AudioBuffer out;
  out.sample_rate = sample_rate;
  for (int s = 0; s < nseg; ++s) {
    auto seg = make_tone(f0_dist(rng), segment, tilt_dist(rng), seed + 100 + s,
                         sample_rate);
    out.samples.insert(out.samples.end(), seg.samples.begin(), seg.samples.end());
  }
  return out;
}

struct SyntheticCorpus {
  std::string manifest_path;
  std::vector<std::string> ids;
};

// Two-speaker tone corpus on disk: each utterance cycles through a few f0
// "phones"; speakers differ by spectral tilt.  Writes WAVs and a manifest.
inline SyntheticCorpus write_tone_corpus(const std::filesystem::path &dir,
                                         int utterances_per_speaker = 3,
                                         double seconds = 1.2,
                                         std::uint64_t seed = 17) {
  std::filesystem::create_directories(dir / "wav");
  const std::vector<double> f0s = {120.0, 180.0, 240.0, 300.0};
  const std::vector<double> tilts = {0.9, 1.8};  // one per speaker
  SyntheticCorpus corpus;
  std::ofstream manifest(dir / "manifest.tsv");
  manifest << "id\taudio\tspeaker\n";
  for (int spk = 0; spk < 2; ++spk) {
    for (int u = 0; u < utterances_per_speaker; ++u) {
      const std::string id = "s" + std::to_string(spk) + "_u" + std::to_string(u);
      dsp::AudioBuffer audio;
      audio.sample_rate = 16000;
      const double segment = seconds / static_cast<double>(f0s.size());
      for (std::size_t p = 0; p < f0s.size(); ++p) {
        const double f0 = f0s[(p + static_cast<std::size_t>(u)) % f0s.size()];
        auto seg = make_tone(f0, segment, tilts[static_cast<std::size_t>(spk)],
                             seed + static_cast<std::uint64_t>(spk * 100 + u * 10) + p);
        audio.samples.insert(audio.samples.end(), seg.samples.begin(),
                             seg.samples.end());
      }
      const std::string wav = (dir / "wav" / (id + ".wav")).string();
      corpus::save_wav(wav, audio);
      manifest << id << "\twav/" << id << ".wav\ts" << spk << "\n";
      corpus.ids.push_back(id);
    }
  }
  corpus.manifest_path = (dir / "manifest.tsv").string();
  return corpus;
}

inline Tensor random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed,
                            double scale = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace zsu::test
