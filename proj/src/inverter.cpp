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

#include "zsu/inverter.hpp"

#include <algorithm>
#include <cmath>

namespace zsu::inverter {

GanKind gan_kind_from_name(const std::string &name) {
  if (name == "lsgan") return GanKind::Lsgan;
  if (name == "wgan") return GanKind::Wgan;
  throw ConfigError("unknown gan kind: " + name);
}

std::string gan_kind_name(GanKind kind) {
  return kind == GanKind::Lsgan ? "lsgan" : "wgan";
}

void InverterConfig::validate() const {
  if (kernel_scales.empty()) throw ConfigError("InverterConfig: no kernel scales");
  for (auto k : kernel_scales)
    if (k < 1) throw ConfigError("InverterConfig: kernel scale must be >= 1");
  if (gan_weight < 0.0) throw ConfigError("InverterConfig: beta must be >= 0");
  if (time_reduction < 1)
    throw ConfigError("InverterConfig: time_reduction must be >= 1");
  if (output_dim < 1 || code_dim < 1)
    throw ConfigError("InverterConfig: dimensions must be positive");
}

Tensor upsample_codes(const Tensor &codes, std::int64_t r) {
  if (r < 1) throw ConfigError("upsample_codes: factor must be >= 1");
  const std::int64_t t = codes.rows(), d = codes.cols();
  Tensor out({t * r, d});
  for (std::int64_t i = 0; i < t; ++i)
    for (std::int64_t k = 0; k < r; ++k)
      for (std::int64_t j = 0; j < d; ++j)
        out.at(i * r + k, j) = codes.at(i, j);
  return out;
}

SpecNormalizer SpecNormalizer::fit(const std::vector<Tensor> &magnitudes,
                                   SpectrogramDomain domain) {
  SpecNormalizer norm;
  norm.domain = domain;
  if (domain == SpectrogramDomain::Linear) return norm;  // identity
  double sum = 0.0, sum_sq = 0.0;
  std::int64_t n = 0;
  for (const auto &m : magnitudes)
    for (std::int64_t i = 0; i < m.numel(); ++i) {
      const double v = std::log1p(m[i]);
      sum += v;
      sum_sq += v * v;
      ++n;
    }
  if (n == 0) throw DataError("SpecNormalizer: no data");
  norm.mean = sum / static_cast<double>(n);
  const double var = sum_sq / static_cast<double>(n) - norm.mean * norm.mean;
  norm.std = var > 1e-12 ? std::sqrt(var) : 1.0;
  return norm;
}

Tensor SpecNormalizer::normalize(const Tensor &magnitude) const {
  if (domain == SpectrogramDomain::Linear) return magnitude;
  Tensor out(magnitude.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = (std::log1p(magnitude[i]) - mean) / std;
  return out;
}

Tensor SpecNormalizer::denormalize(const Tensor &network_output) const {
  if (domain == SpectrogramDomain::Linear) return network_output;
  Tensor out(network_output.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::max(std::expm1(network_output[i] * std + mean), 0.0);
  return out;
}

Code2Spec::Code2Spec(const InverterConfig &cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::int64_t n_scales = static_cast<std::int64_t>(cfg_.kernel_scales.size());
  const std::int64_t concat_width = cfg_.scale_channels * n_scales;
  std::int64_t c_in = cfg_.code_dim;
  for (std::int64_t layer = 0; layer < cfg_.multiscale_layers; ++layer) {
    std::vector<nn::Conv1dLayer> convs;
    for (std::size_t s = 0; s < cfg_.kernel_scales.size(); ++s)
      convs.emplace_back(c_in, cfg_.scale_channels, cfg_.kernel_scales[s], 1, rng,
                         "c2s.scale" + std::to_string(layer) + ".k" +
                             std::to_string(cfg_.kernel_scales[s]));
    scales_.emplace_back(std::move(convs), concat_width,
                         "c2s.scale" + std::to_string(layer) + ".bn");
    c_in = concat_width;
  }
  for (std::size_t i = 0; i < cfg_.head_channels.size(); ++i) {
    head_.emplace_back(c_in, cfg_.head_channels[i], 3, 1, rng,
                       "c2s.head" + std::to_string(i));
    c_in = cfg_.head_channels[i];
  }
  out_ = nn::Conv1dLayer(c_in, cfg_.output_dim, 3, 1, rng, "c2s.out");
}

Var Code2Spec::forward(const Var &codes_upsampled, bool training) {
  if (codes_upsampled->value.cols() != cfg_.code_dim)
    throw DataError("Code2Spec: input dim " +
                    std::to_string(codes_upsampled->value.cols()) +
                    " does not match code_dim " + std::to_string(cfg_.code_dim));
  Var h = codes_upsampled;
  for (auto &layer : scales_) {
    Var cat;
    for (std::size_t s = 0; s < layer.convs.size(); ++s) {
      Var branch = layer.convs[s].forward(h);
      cat = s == 0 ? branch : grad::concat_cols(cat, branch);
    }
    h = grad::leaky_relu(layer.bn.forward(cat, training, training), nn::kLeakySlope);
  }
  for (auto &block : head_) h = block.forward(h, training, training);
  Var out = out_.forward(h);  // last layer: no BN, no activation
  if (cfg_.domain == SpectrogramDomain::Linear)
    out = grad::softplus(out);  // nonnegative magnitudes
  return out;
}

Tensor Code2Spec::predict(const Tensor &codes_upsampled) {
  return forward(grad::constant(codes_upsampled), false)->value;
}

std::vector<Var> Code2Spec::parameters() const {
  std::vector<Var> params;
  for (const auto &layer : scales_) {
    for (const auto &conv : layer.convs) {
      params.push_back(conv.weight);
      params.push_back(conv.bias);
    }
    params.push_back(layer.bn.gamma);
    params.push_back(layer.bn.beta);
  }
  for (const auto &block : head_) block.collect(params);
  params.push_back(out_.weight);
  params.push_back(out_.bias);
  return params;
}

std::vector<std::pair<std::string, grad::BatchNormStats *>> Code2Spec::bn_stats() {
  std::vector<std::pair<std::string, grad::BatchNormStats *>> list;
  for (std::size_t i = 0; i < scales_.size(); ++i)
    list.emplace_back("c2s.scale" + std::to_string(i) + ".bn", &scales_[i].bn.stats);
  for (std::size_t i = 0; i < head_.size(); ++i)
    list.emplace_back("c2s.head" + std::to_string(i) + ".bn", &head_[i].bn.stats);
  return list;
}

corpus::ModelBundle Code2Spec::to_bundle(const SpecNormalizer &norm) const {
  corpus::ModelBundle bundle;
  bundle.kind = "inverter";
  bundle.metadata["code_dim"] = std::to_string(cfg_.code_dim);
  bundle.metadata["output_dim"] = std::to_string(cfg_.output_dim);
  bundle.metadata["time_reduction"] = std::to_string(cfg_.time_reduction);
  bundle.metadata["scale_channels"] = std::to_string(cfg_.scale_channels);
  bundle.metadata["multiscale_layers"] = std::to_string(cfg_.multiscale_layers);
  bundle.metadata["mse_weight"] = std::to_string(cfg_.mse_weight);
  bundle.metadata["gan_weight"] = std::to_string(cfg_.gan_weight);
  bundle.metadata["gan_kind"] = gan_kind_name(cfg_.gan_kind);
  bundle.metadata["domain"] =
      cfg_.domain == SpectrogramDomain::Log ? "log" : "linear";
  bundle.metadata["learning_rate"] = std::to_string(cfg_.learning_rate);
  bundle.metadata["norm_mean"] = std::to_string(norm.mean);
  bundle.metadata["norm_std"] = std::to_string(norm.std);
  std::string kernels, heads;
  for (auto k : cfg_.kernel_scales)
    kernels += (kernels.empty() ? "" : ",") + std::to_string(k);
  for (auto h : cfg_.head_channels)
    heads += (heads.empty() ? "" : ",") + std::to_string(h);
  bundle.metadata["kernel_scales"] = kernels;
  bundle.metadata["head_channels"] = heads;
  for (const auto &p : parameters())
    bundle.add(p->name, p->value, corpus::TensorDType::F64);
  auto stats = const_cast<Code2Spec *>(this)->bn_stats();
  for (const auto &[name, s] : stats) {
    bundle.add(name + ".running_mean", s->running_mean, corpus::TensorDType::F64);
    bundle.add(name + ".running_var", s->running_var, corpus::TensorDType::F64);
  }
  return bundle;
}

namespace {
std::vector<std::int64_t> parse_int_list(const std::string &s) {
  std::vector<std::int64_t> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    out.push_back(std::stoll(s.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}
}  // namespace

std::pair<std::unique_ptr<Code2Spec>, SpecNormalizer> Code2Spec::from_bundle(
    const corpus::ModelBundle &bundle) {
  if (bundle.kind != "inverter")
    throw DataError("from_bundle: expected kind 'inverter', got '" + bundle.kind + "'");
  InverterConfig cfg;
  cfg.code_dim = bundle.meta_int("code_dim");
  cfg.output_dim = bundle.meta_int("output_dim");
  cfg.time_reduction = bundle.meta_int("time_reduction");
  cfg.scale_channels = bundle.meta_int("scale_channels");
  cfg.multiscale_layers = bundle.meta_int("multiscale_layers");
  cfg.mse_weight = bundle.meta_double("mse_weight");
  cfg.gan_weight = bundle.meta_double("gan_weight");
  cfg.gan_kind = gan_kind_from_name(bundle.meta("gan_kind"));
  cfg.domain = bundle.meta("domain") == "log" ? SpectrogramDomain::Log
                                              : SpectrogramDomain::Linear;
  cfg.learning_rate = bundle.meta_double("learning_rate");
  cfg.kernel_scales = parse_int_list(bundle.meta("kernel_scales"));
  cfg.head_channels = parse_int_list(bundle.meta("head_channels"));
  auto model = std::make_unique<Code2Spec>(cfg, 0);
  for (const auto &p : model->parameters()) p->value = bundle.require(p->name);
  for (const auto &[name, s] : model->bn_stats()) {
    s->running_mean = bundle.require(name + ".running_mean");
    s->running_var = bundle.require(name + ".running_var");
  }
  SpecNormalizer norm;
  norm.domain = cfg.domain;
  norm.mean = bundle.meta_double("norm_mean");
  norm.std = bundle.meta_double("norm_std");
  return {std::move(model), norm};
}

Discriminator::Discriminator(std::int64_t input_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::vector<std::int64_t> widths = {64, 128, 256, 256};
  std::int64_t c_in = input_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    blocks_.emplace_back(c_in, widths[i], 4, 2, rng, "disc.block" + std::to_string(i));
    c_in = widths[i];
  }
  out_ = nn::Conv1dLayer(c_in, 1, 3, 1, rng, "disc.out");
}

Var Discriminator::forward(const Var &spectrogram, bool training) {
  Var h = spectrogram;
  for (auto &block : blocks_) h = block.forward(h, training, training);
  return grad::mean_all(out_.forward(h));  // one scalar score per example
}

std::vector<Var> Discriminator::parameters() const {
  std::vector<Var> params;
  for (const auto &block : blocks_) block.collect(params);
  params.push_back(out_.weight);
  params.push_back(out_.bias);
  return params;
}

std::vector<std::pair<std::string, grad::BatchNormStats *>> Discriminator::bn_stats() {
  std::vector<std::pair<std::string, grad::BatchNormStats *>> list;
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    list.emplace_back("disc.block" + std::to_string(i) + ".bn", &blocks_[i].bn.stats);
  return list;
}

void Discriminator::clip_weights(double limit) {
  for (const auto &p : parameters())
    for (std::int64_t i = 0; i < p->value.numel(); ++i)
      p->value[i] = std::clamp(p->value[i], -limit, limit);
}

GanLosses gan_losses(const Var &disc_on_real, const Var &disc_on_fake,
                     const Var &disc_on_fake_detached, GanKind kind) {
  GanLosses losses;
  if (kind == GanKind::Wgan) {
    losses.generator = grad::scale(disc_on_fake, -1.0);
    losses.discriminator = grad::sub(disc_on_fake_detached, disc_on_real);
  } else {
    losses.generator = grad::square(grad::add_scalar(disc_on_fake, -1.0));
    losses.discriminator =
        grad::add(grad::square(disc_on_fake_detached),
                  grad::square(grad::add_scalar(disc_on_real, -1.0)));
  }
  return losses;
}

namespace {

struct SpecChunk {
  Tensor codes_upsampled;  // T x D_e
  Tensor target;           // T x D_m (raw magnitudes)
};

std::vector<SpecChunk> make_spec_chunks(const std::vector<InverterTrainPair> &pairs,
                                        const InverterConfig &cfg) {
  std::vector<SpecChunk> chunks;
  for (const auto &pair : pairs) {
    const Tensor up = upsample_codes(pair.code_vectors, cfg.time_reduction);
    const std::int64_t t = std::min(up.rows(), pair.magnitude.rows());
    for (std::int64_t start = 0; start < t; start += cfg.chunk_length) {
      const std::int64_t n = std::min(cfg.chunk_length, t - start);
      if (n < 8) break;  // too short to be a useful example
      SpecChunk chunk;
      chunk.codes_upsampled = Tensor({n, up.cols()});
      chunk.target = Tensor({n, pair.magnitude.cols()});
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < up.cols(); ++j)
          chunk.codes_upsampled.at(i, j) = up.at(start + i, j);
        for (std::int64_t j = 0; j < pair.magnitude.cols(); ++j)
          chunk.target.at(i, j) = pair.magnitude.at(start + i, j);
      }
      chunks.push_back(std::move(chunk));
    }
  }
  return chunks;
}

}  // namespace

InverterTrainResult train_inverter(Code2Spec &model, Discriminator &disc,
                                   const std::vector<InverterTrainPair> &pairs,
                                   const InverterTrainOptions &opts,
                                   grad::Adam &gen_adam, grad::Adam &disc_adam) {
  if (pairs.empty()) throw DataError("train_inverter: empty training set");
  const InverterConfig &cfg = model.config();
  std::vector<SpecChunk> chunks = make_spec_chunks(pairs, cfg);
  if (chunks.empty()) throw DataError("train_inverter: no usable chunks");

  InverterTrainResult result;
  std::vector<Tensor> mags;
  for (const auto &pair : pairs) mags.push_back(pair.magnitude);
  result.normalizer = SpecNormalizer::fit(mags, cfg.domain);

  const std::vector<Var> gen_params = model.parameters();
  const std::vector<Var> disc_params = disc.parameters();
  const bool adversarial = cfg.gan_weight > 0.0;

  for (std::int64_t step = 0; step < opts.steps; ++step) {
    const SpecChunk &chunk = chunks[static_cast<std::size_t>(
        gen_adam.step_count() % static_cast<std::int64_t>(chunks.size()))];
    const Tensor target_norm = result.normalizer.normalize(chunk.target);

    Var codes = grad::constant(chunk.codes_upsampled);
    Var fake = model.forward(codes, true);
    Var target = grad::constant(target_norm);
    Var mse_term = grad::mse(fake, target);

    double gen_gan_value = 0.0, disc_value = 0.0;
    if (adversarial) {
      Var d_fake = disc.forward(fake, true);
      Var d_fake_det = disc.forward(grad::constant(fake->value), true);
      Var d_real = disc.forward(target, true);
      GanLosses gan = gan_losses(d_real, d_fake, d_fake_det, cfg.gan_kind);
      Var gen_total = grad::add(grad::scale(mse_term, cfg.mse_weight),
                                grad::scale(gan.generator, cfg.gan_weight));
      if (!std::isfinite(gen_total->value[0]))
        throw NumericError("train_inverter: non-finite generator loss");
      grad::backward(gen_total);
      // The generator loss leaks gradients into the discriminator via
      // Disc(fake); those must not feed the discriminator update.
      disc_adam.zero_grad(disc_params);
      gen_adam.step(gen_params);

      if (!std::isfinite(gan.discriminator->value[0]))
        throw NumericError("train_inverter: non-finite discriminator loss");
      grad::backward(gan.discriminator);
      disc_adam.step(disc_params);
      if (cfg.gan_kind == GanKind::Wgan) disc.clip_weights(cfg.wgan_clip);
      gen_gan_value = gan.generator->value[0];
      disc_value = gan.discriminator->value[0];
    } else {
      Var gen_total = grad::scale(mse_term, cfg.mse_weight);
      if (!std::isfinite(gen_total->value[0]))
        throw NumericError("train_inverter: non-finite loss");
      grad::backward(gen_total);
      gen_adam.step(gen_params);
    }

    result.metrics.mse.push_back(mse_term->value[0]);
    result.metrics.gen_gan.push_back(gen_gan_value);
    result.metrics.disc_loss.push_back(disc_value);
  }
  return result;
}

SynthesisResult synthesize(Code2Spec &model, const SpecNormalizer &norm,
                           const Tensor &code_vectors,
                           const dsp::StftConfig &stft_cfg, int sample_rate,
                           std::int64_t griffin_lim_iterations,
                           std::uint64_t seed) {
  const InverterConfig &cfg = model.config();
  if (code_vectors.cols() != cfg.code_dim)
    throw ConfigError("synthesize: code dim " + std::to_string(code_vectors.cols()) +
                      " does not match inverter code_dim " +
                      std::to_string(cfg.code_dim));
  if (cfg.output_dim != stft_cfg.num_bins())
    throw ConfigError("synthesize: inverter output_dim " +
                      std::to_string(cfg.output_dim) + " does not match fft bins " +
                      std::to_string(stft_cfg.num_bins()));
  const Tensor up = upsample_codes(code_vectors, cfg.time_reduction);
  const Tensor predicted_norm = model.predict(up);
  SynthesisResult result;
  result.predicted_magnitude = norm.denormalize(predicted_norm);
  dsp::Spectrogram spec;
  spec.magnitude = result.predicted_magnitude;
  spec.config = stft_cfg;
  spec.sample_rate = sample_rate;
  dsp::GriffinLimResult gl =
      dsp::griffin_lim(spec, stft_cfg, griffin_lim_iterations, seed);
  result.audio = gl.audio;
  result.audio.sample_rate = sample_rate;
  return result;
}

}  // namespace zsu::inverter
