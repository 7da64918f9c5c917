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

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "zsu/codes.hpp"
#include "zsu/corpus.hpp"
#include "zsu/dsp.hpp"
#include "zsu/nn.hpp"
#include "zsu/tensor.hpp"

namespace zsu::inverter {

using grad::Var;

enum class GanKind { Lsgan, Wgan };

GanKind gan_kind_from_name(const std::string &name);
std::string gan_kind_name(GanKind kind);

enum class SpectrogramDomain { Log, Linear };

struct InverterConfig {
  std::vector<std::int64_t> kernel_scales = {1, 3, 5, 7};
  std::int64_t scale_channels = 64;   // per-scale width in the multi-scale layers
  std::int64_t multiscale_layers = 4;
  std::vector<std::int64_t> head_channels = {512};  // 1-D stack before output
  std::int64_t code_dim = 64;    // D_e
  std::int64_t output_dim = 1025;  // D_m = fft/2 + 1
  std::int64_t time_reduction = 4;
  double mse_weight = 1.0;       // alpha
  double gan_weight = 1.0;       // beta
  GanKind gan_kind = GanKind::Lsgan;
  SpectrogramDomain domain = SpectrogramDomain::Log;
  double learning_rate = 1e-4;
  double wgan_clip = 0.01;
  std::int64_t chunk_length = 128;  // spectrogram frames per training example

  void validate() const;
};

// Each code vector repeated r consecutive times: T_z x D -> (r T_z) x D.
Tensor upsample_codes(const Tensor &codes, std::int64_t r);

// Normalization of the regression target: in log domain, spectrograms are
// log1p-compressed and standardized per corpus before MSE.
struct SpecNormalizer {
  SpectrogramDomain domain = SpectrogramDomain::Log;
  double mean = 0.0;
  double std = 1.0;

  static SpecNormalizer fit(const std::vector<Tensor> &magnitudes,
                            SpectrogramDomain domain);
  Tensor normalize(const Tensor &magnitude) const;
  Tensor denormalize(const Tensor &network_output) const;  // back to magnitude
};

class Code2Spec {
 public:
  Code2Spec(const InverterConfig &cfg, std::uint64_t seed);

  const InverterConfig &config() const { return cfg_; }

  // Upsampled codes (T_s x D_e) -> normalized-spectrogram prediction
  // (T_s x D_m).  Stride-1 same-padding convolutions preserve length.
  Var forward(const Var &codes_upsampled, bool training);
  Tensor predict(const Tensor &codes_upsampled);  // inference mode

  std::vector<Var> parameters() const;

  corpus::ModelBundle to_bundle(const SpecNormalizer &norm) const;
  static std::pair<std::unique_ptr<Code2Spec>, SpecNormalizer> from_bundle(
      const corpus::ModelBundle &bundle);

  std::vector<std::pair<std::string, grad::BatchNormStats *>> bn_stats();

 private:
  InverterConfig cfg_;
  struct ScaleLayer {
    std::vector<nn::Conv1dLayer> convs;  // one per kernel scale
    nn::BatchNormLayer bn;
    ScaleLayer(std::vector<nn::Conv1dLayer> cv, std::int64_t channels,
               const std::string &name)
        : convs(std::move(cv)), bn(channels, name) {}
  };
  std::vector<ScaleLayer> scales_;
  std::vector<nn::ConvBlock> head_;
  nn::Conv1dLayer out_;
};

// Strided conv stack reducing a spectrogram to one scalar score.
class Discriminator {
 public:
  Discriminator(std::int64_t input_dim, std::uint64_t seed);

  Var forward(const Var &spectrogram, bool training);
  std::vector<Var> parameters() const;
  std::vector<std::pair<std::string, grad::BatchNormStats *>> bn_stats();
  void clip_weights(double limit);

 private:
  std::vector<nn::ConvBlock> blocks_;
  nn::Conv1dLayer out_;
};

struct GanLosses {
  Var generator;      // L_GAN^G
  Var discriminator;  // L_GAN^D
};

// WGAN: G = -Disc(fake), D = Disc(fake) - Disc(real).
// LSGAN: G = (Disc(fake) - 1)^2, D = Disc(fake)^2 + (Disc(real) - 1)^2.
// Scores are means over the example; disc_on_fake_detached feeds the D loss.
GanLosses gan_losses(const Var &disc_on_real, const Var &disc_on_fake,
                     const Var &disc_on_fake_detached, GanKind kind);

struct InverterTrainPair {
  std::string id;
  Tensor code_vectors;  // T_z x D_e (pre-upsampling)
  Tensor magnitude;     // T_s x D_m ground-truth linear magnitudes
};

struct InverterTrainOptions {
  std::int64_t steps = 300;
  std::uint64_t seed = 0;
};

struct InverterTrainMetrics {
  std::vector<double> mse;        // per step (normalized domain)
  std::vector<double> gen_gan;    // per step
  std::vector<double> disc_loss;  // per step
};

struct InverterTrainResult {
  SpecNormalizer normalizer;
  InverterTrainMetrics metrics;
};

InverterTrainResult train_inverter(Code2Spec &model, Discriminator &disc,
                                   const std::vector<InverterTrainPair> &pairs,
                                   const InverterTrainOptions &opts,
                                   grad::Adam &gen_adam, grad::Adam &disc_adam);

struct SynthesisResult {
  dsp::AudioBuffer audio;
  Tensor predicted_magnitude;  // T_s x D_m
};

SynthesisResult synthesize(Code2Spec &model, const SpecNormalizer &norm,
                           const Tensor &code_vectors, const dsp::StftConfig &stft_cfg,
                           int sample_rate, std::int64_t griffin_lim_iterations,
                           std::uint64_t seed);

}  // namespace zsu::inverter
