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

#include "zsu/vq.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "zsu/cluster.hpp"

namespace zsu::vq {

void VqVaeConfig::validate() const {
  if (time_reduction != 1 && time_reduction != 2 && time_reduction != 4 &&
      time_reduction != 8)
    throw ConfigError("VqVaeConfig: time_reduction must be one of 1, 2, 4, 8");
  if (codebook_size < 1) throw ConfigError("VqVaeConfig: codebook_size must be >= 1");
  if (commitment_cost <= 0.0)
    throw ConfigError("VqVaeConfig: commitment cost must be positive");
  if (channels.empty()) throw ConfigError("VqVaeConfig: need at least one channel width");
  if (chunk_length % time_reduction != 0)
    throw ConfigError("VqVaeConfig: chunk_length must be a multiple of time_reduction");
}

std::vector<std::int64_t> VqVaeConfig::stride_plan() const {
  // Distribute the stride product over the 1-D stack as factors of 2.
  std::vector<std::int64_t> plan(channels.size(), 1);
  std::int64_t remaining = time_reduction;
  for (std::size_t i = 0; i < plan.size() && remaining > 1; ++i) {
    plan[i] = 2;
    remaining /= 2;
  }
  if (remaining > 1)
    throw ConfigError("VqVaeConfig: not enough layers to realize the stride product");
  return plan;
}

QuantizeResult quantize(const Tensor &latents, const Tensor &codebook) {
  if (codebook.rows() < 1) throw StateError("quantize: empty codebook");
  if (latents.cols() != codebook.cols())
    throw DataError("quantize: latent dimension does not match codebook");
  const std::int64_t t = latents.rows();
  const std::int64_t k = codebook.rows();
  const std::int64_t d = codebook.cols();
  QuantizeResult result;
  result.codes.codebook_size = k;
  result.codes.indices.resize(static_cast<std::size_t>(t));
  result.quantized = Tensor({t, d});
  for (std::int64_t i = 0; i < t; ++i) {
    std::int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < k; ++c) {
      double dist = 0.0;
      for (std::int64_t j = 0; j < d; ++j) {
        const double diff = latents.at(i, j) - codebook.at(c, j);
        dist += diff * diff;
      }
      if (dist < best_d) {  // ties break to the lowest index
        best_d = dist;
        best = c;
      }
    }
    result.codes.indices[static_cast<std::size_t>(i)] = best;
    for (std::int64_t j = 0; j < d; ++j)
      result.quantized.at(i, j) = codebook.at(best, j);
  }
  return result;
}

VqVae::VqVae(const VqVaeConfig &cfg, std::int64_t num_speakers,
             std::uint64_t seed)
    : cfg_(cfg), num_speakers_(num_speakers) {
  cfg_.validate();
  if (num_speakers < 1) throw ConfigError("VqVae: need at least one speaker");
  std::mt19937_64 rng(seed);

  stem_ = nn::Conv2dLayer(1, cfg_.stem_channels, 3, 3, rng, "enc.stem");
  stem_bn_ = std::make_unique<nn::BatchNormLayer>(cfg_.stem_channels, "enc.stem.bn");

  const std::vector<std::int64_t> strides = cfg_.stride_plan();
  std::int64_t c_in = cfg_.input_dim * cfg_.stem_channels;
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    enc_blocks_.emplace_back(c_in, cfg_.channels[i], 3, strides[i], rng,
                             "enc.block" + std::to_string(i));
    c_in = cfg_.channels[i];
  }
  enc_out_ = nn::Conv1dLayer(c_in, cfg_.code_dim, 1, 1, rng, "enc.out");

  std::int64_t d_in = cfg_.code_dim + cfg_.speaker_dim;
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    const std::int64_t width = cfg_.channels[cfg_.channels.size() - 1 - i];
    dec_blocks_.emplace_back(d_in, width, 3, 1, rng,
                             "dec.block" + std::to_string(i));
    d_in = width;
  }
  dec_out_ = nn::Conv1dLayer(d_in, cfg_.input_dim, 3, 1, rng, "dec.out");

  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor cb({cfg_.codebook_size, cfg_.code_dim});
  for (std::int64_t i = 0; i < cb.numel(); ++i) cb[i] = dist(rng) * 0.1;
  codebook_ = grad::parameter(std::move(cb), "codebook");
  Tensor sp({num_speakers, cfg_.speaker_dim});
  for (std::int64_t i = 0; i < sp.numel(); ++i) sp[i] = dist(rng) * 0.1;
  speaker_table_ = grad::parameter(std::move(sp), "speakers");
}

Var VqVae::encode(const Var &features, bool training) {
  if (features->value.cols() != cfg_.input_dim)
    throw DataError("VqVae::encode: feature dimension mismatch");
  const std::int64_t t = features->value.rows();
  const std::int64_t d = cfg_.input_dim;
  Var h = grad::reshape(features, {t, d, 1});
  h = stem_.forward(h);
  h = grad::reshape(h, {t * d, cfg_.stem_channels});
  h = stem_bn_->forward(h, training, training);
  h = grad::leaky_relu(h, nn::kLeakySlope);
  h = grad::reshape(h, {t, d * cfg_.stem_channels});
  for (auto &block : enc_blocks_) h = block.forward(h, training, training);
  return enc_out_.forward(h);  // last encoder layer: no BN, no activation
}

Tensor VqVae::encode_inference(const Tensor &features) {
  return encode(grad::constant(features), false)->value;
}

Var VqVae::decode(const Var &quantized, std::int64_t speaker, bool training) {
  if (speaker < 0 || speaker >= num_speakers_)
    throw DataError("VqVae::decode: unknown speaker id " + std::to_string(speaker));
  const std::int64_t t_z = quantized->value.rows();
  const std::vector<std::int64_t> ids(static_cast<std::size_t>(t_z), speaker);
  Var spk = grad::embedding_lookup(speaker_table_, ids);
  Var h = grad::concat_cols(quantized, spk);
  h = grad::repeat_rows(h, cfg_.time_reduction);
  for (auto &block : dec_blocks_) h = block.forward(h, training, training);
  return dec_out_.forward(h);  // last decoder layer: no BN, no activation
}

Var VqVae::loss_graph(const Tensor &features, std::int64_t speaker,
                      const std::vector<double> &row_weights, VqLossTerms *terms,
                      CodeSequence *codes_out, bool training) {
  Var x = grad::constant(features, "input");
  Var z = encode(x, training);
  QuantizeResult q = quantize(z->value, codebook_->value);
  if (codes_out) {
    q.codes.reduction_factor = cfg_.time_reduction;
    *codes_out = q.codes;
  }
  Var e_c = grad::embedding_lookup(codebook_, q.codes.indices);
  // Straight-through: decoder sees e_c, gradient is copied to z.
  Var dec_in = grad::add(z, grad::stop_gradient(grad::sub(e_c, z)));
  Var x_hat = decode(dec_in, speaker, training);

  std::vector<double> weights = row_weights;
  if (weights.empty())
    weights.assign(static_cast<std::size_t>(features.rows()), 1.0);
  Var recon = grad::mse_masked(x_hat, x, weights);
  Var codebook_term = grad::mse(grad::stop_gradient(z), e_c);
  Var commitment = grad::scale(grad::mse(z, grad::stop_gradient(e_c)),
                               cfg_.commitment_cost);
  Var total = grad::add(grad::add(recon, codebook_term), commitment);
  if (terms) {
    terms->reconstruction = recon->value[0];
    terms->codebook = codebook_term->value[0];
    terms->commitment = commitment->value[0];
    terms->total = total->value[0];
  }
  if (!std::isfinite(total->value[0]))
    throw NumericError("VqVae: non-finite loss (recon=" +
                       std::to_string(recon->value[0]) + ")");
  return total;
}

std::vector<Var> VqVae::parameters() const {
  std::vector<Var> params;
  params.push_back(stem_.weight);
  params.push_back(stem_.bias);
  params.push_back(stem_bn_->gamma);
  params.push_back(stem_bn_->beta);
  for (const auto &b : enc_blocks_) b.collect(params);
  params.push_back(enc_out_.weight);
  params.push_back(enc_out_.bias);
  for (const auto &b : dec_blocks_) b.collect(params);
  params.push_back(dec_out_.weight);
  params.push_back(dec_out_.bias);
  params.push_back(codebook_);
  params.push_back(speaker_table_);
  return params;
}

void VqVae::init_codebook_from(const Tensor &vectors) {
  if (vectors.rows() != cfg_.codebook_size || vectors.cols() != cfg_.code_dim)
    throw DataError("init_codebook_from: shape mismatch");
  codebook_->value = vectors;
}

namespace {

std::vector<std::pair<std::string, grad::BatchNormStats *>> bn_stats_list(
    nn::BatchNormLayer *stem_bn, std::vector<nn::ConvBlock> &enc,
    std::vector<nn::ConvBlock> &dec) {
  std::vector<std::pair<std::string, grad::BatchNormStats *>> list;
  list.emplace_back("enc.stem.bn", &stem_bn->stats);
  for (std::size_t i = 0; i < enc.size(); ++i)
    list.emplace_back("enc.block" + std::to_string(i) + ".bn", &enc[i].bn.stats);
  for (std::size_t i = 0; i < dec.size(); ++i)
    list.emplace_back("dec.block" + std::to_string(i) + ".bn", &dec[i].bn.stats);
  return list;
}

}  // namespace

corpus::ModelBundle VqVae::to_bundle() const {
  corpus::ModelBundle bundle;
  bundle.kind = "vqvae";
  bundle.metadata["time_reduction"] = std::to_string(cfg_.time_reduction);
  bundle.metadata["codebook_size"] = std::to_string(cfg_.codebook_size);
  bundle.metadata["code_dim"] = std::to_string(cfg_.code_dim);
  bundle.metadata["speaker_dim"] = std::to_string(cfg_.speaker_dim);
  bundle.metadata["input_dim"] = std::to_string(cfg_.input_dim);
  bundle.metadata["commitment_cost"] = std::to_string(cfg_.commitment_cost);
  bundle.metadata["stem_channels"] = std::to_string(cfg_.stem_channels);
  bundle.metadata["chunk_length"] = std::to_string(cfg_.chunk_length);
  bundle.metadata["learning_rate"] = std::to_string(cfg_.learning_rate);
  bundle.metadata["num_speakers"] = std::to_string(num_speakers_);
  std::string widths;
  for (auto c : cfg_.channels) widths += (widths.empty() ? "" : ",") + std::to_string(c);
  bundle.metadata["channels"] = widths;
  for (const auto &p : parameters())
    bundle.add(p->name, p->value, corpus::TensorDType::F64);
  auto stats = bn_stats_list(stem_bn_.get(),
                             const_cast<std::vector<nn::ConvBlock> &>(enc_blocks_),
                             const_cast<std::vector<nn::ConvBlock> &>(dec_blocks_));
  for (const auto &[name, s] : stats) {
    bundle.add(name + ".running_mean", s->running_mean, corpus::TensorDType::F64);
    bundle.add(name + ".running_var", s->running_var, corpus::TensorDType::F64);
  }
  return bundle;
}

std::unique_ptr<VqVae> VqVae::from_bundle(const corpus::ModelBundle &bundle) {
  if (bundle.kind != "vqvae")
    throw DataError("from_bundle: expected kind 'vqvae', got '" + bundle.kind + "'");
  VqVaeConfig cfg;
  cfg.time_reduction = bundle.meta_int("time_reduction");
  cfg.codebook_size = bundle.meta_int("codebook_size");
  cfg.code_dim = bundle.meta_int("code_dim");
  cfg.speaker_dim = bundle.meta_int("speaker_dim");
  cfg.input_dim = bundle.meta_int("input_dim");
  cfg.commitment_cost = bundle.meta_double("commitment_cost");
  cfg.stem_channels = bundle.meta_int("stem_channels");
  cfg.chunk_length = bundle.meta_int("chunk_length");
  cfg.learning_rate = bundle.meta_double("learning_rate");
  cfg.channels.clear();
  std::string widths = bundle.meta("channels");
  std::size_t pos = 0;
  while (pos < widths.size()) {
    std::size_t comma = widths.find(',', pos);
    if (comma == std::string::npos) comma = widths.size();
    cfg.channels.push_back(std::stoll(widths.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  auto model = std::make_unique<VqVae>(cfg, bundle.meta_int("num_speakers"), 0);
  for (const auto &p : model->parameters()) p->value = bundle.require(p->name);
  auto stats = bn_stats_list(model->stem_bn_.get(), model->enc_blocks_,
                             model->dec_blocks_);
  for (const auto &[name, s] : stats) {
    s->running_mean = bundle.require(name + ".running_mean");
    s->running_var = bundle.require(name + ".running_var");
  }
  return model;
}

void VqVae::save_optimizer(corpus::ModelBundle &bundle,
                           const grad::Adam &adam) const {
  auto &mutable_adam = const_cast<grad::Adam &>(adam);
  bundle.metadata["adam_step"] = std::to_string(adam.step_count());
  const auto params = parameters();
  for (std::size_t i = 0; i < mutable_adam.first_moments().size(); ++i) {
    bundle.add("adam.m." + params[i]->name, mutable_adam.first_moments()[i],
               corpus::TensorDType::F64);
    bundle.add("adam.v." + params[i]->name, mutable_adam.second_moments()[i],
               corpus::TensorDType::F64);
  }
}

void VqVae::load_optimizer(const corpus::ModelBundle &bundle,
                           grad::Adam &adam) const {
  adam.set_step_count(bundle.meta_int("adam_step"));
  adam.first_moments().clear();
  adam.second_moments().clear();
  for (const auto &p : parameters()) {
    adam.first_moments().push_back(bundle.require("adam.m." + p->name));
    adam.second_moments().push_back(bundle.require("adam.v." + p->name));
  }
}

double perplexity(const std::vector<std::int64_t> &code_counts) {
  std::int64_t total = 0;
  for (auto c : code_counts) total += c;
  if (total == 0) return 0.0;
  double entropy = 0.0;
  for (auto c : code_counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

namespace {

struct Chunk {
  Tensor features;
  std::vector<double> weights;  // 0 for zero-padded rows
  std::int64_t speaker = 0;
};

std::vector<Chunk> make_chunks(const std::vector<TrainUtterance> &data,
                               std::int64_t chunk_length) {
  std::vector<Chunk> chunks;
  for (const auto &utt : data) {
    const std::int64_t t = utt.features.rows();
    const std::int64_t d = utt.features.cols();
    if (t < 1) continue;
    for (std::int64_t start = 0; start < t; start += chunk_length) {
      Chunk chunk;
      chunk.speaker = utt.speaker;
      chunk.features = Tensor({chunk_length, d});
      chunk.weights.assign(static_cast<std::size_t>(chunk_length), 0.0);
      const std::int64_t n = std::min(chunk_length, t - start);
      for (std::int64_t i = 0; i < n; ++i) {
        chunk.weights[static_cast<std::size_t>(i)] = 1.0;
        for (std::int64_t j = 0; j < d; ++j)
          chunk.features.at(i, j) = utt.features.at(start + i, j);
      }
      chunks.push_back(std::move(chunk));
    }
  }
  return chunks;
}

}  // namespace

VqTrainMetrics train_vqvae(VqVae &model, const std::vector<TrainUtterance> &data,
                           const VqTrainOptions &opts, grad::Adam &adam) {
  if (data.empty()) throw DataError("train_vqvae: empty training set");
  const auto &cfg = model.config();
  std::vector<Chunk> chunks = make_chunks(data, cfg.chunk_length);
  if (chunks.empty()) throw DataError("train_vqvae: no usable frames in training set");

  // Codebook warm start from a K-Means fit on initial encoder outputs,
  // guarding against dead codes at random init.
  if (cfg.codebook_init == CodebookInit::KMeans && adam.step_count() == 0) {
    const std::size_t sample = std::min<std::size_t>(chunks.size(), 64);
    std::vector<Tensor> latents;
    std::int64_t total_rows = 0;
    for (std::size_t i = 0; i < sample; ++i) {
      Var z = model.encode(grad::constant(chunks[i].features), true);
      latents.push_back(z->value);
      total_rows += z->value.rows();
    }
    if (total_rows >= cfg.codebook_size) {
      Tensor all({total_rows, cfg.code_dim});
      std::int64_t row = 0;
      for (const auto &l : latents)
        for (std::int64_t i = 0; i < l.rows(); ++i, ++row)
          for (std::int64_t j = 0; j < cfg.code_dim; ++j)
            all.at(row, j) = l.at(i, j);
      cluster::KMeansFitOptions km;
      km.batch_size = total_rows;
      km.iterations = 5;
      km.seed = opts.seed;
      const cluster::KMeansModel fit = cluster::kmeans_fit(all, cfg.codebook_size, km);
      // Centroids live in standardized space; map them back.
      Tensor cb({cfg.codebook_size, cfg.code_dim});
      for (std::int64_t c = 0; c < cfg.codebook_size; ++c)
        for (std::int64_t j = 0; j < cfg.code_dim; ++j)
          cb.at(c, j) = fit.centroids.at(c, j) * fit.standardizer.std[j] +
                        fit.standardizer.mean[j];
      model.init_codebook_from(cb);
    }
  }

  VqTrainMetrics metrics;
  const std::vector<Var> params = model.parameters();
  for (std::int64_t step = 0; step < opts.steps; ++step) {
    const Chunk &chunk = chunks[static_cast<std::size_t>(
        (adam.step_count()) % static_cast<std::int64_t>(chunks.size()))];
    VqLossTerms terms;
    CodeSequence codes;
    Var loss = model.loss_graph(chunk.features, chunk.speaker, chunk.weights,
                                &terms, &codes, true);
    grad::backward(loss);
    adam.step(params);
    metrics.per_step.push_back(terms);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(cfg.codebook_size), 0);
    for (auto c : codes.indices) ++counts[static_cast<std::size_t>(c)];
    metrics.codebook_perplexity.push_back(perplexity(counts));

    if (opts.checkpoint_every > 0 && !opts.checkpoint_dir.empty() &&
        (step + 1) % opts.checkpoint_every == 0) {
      corpus::ModelBundle bundle = model.to_bundle();
      model.save_optimizer(bundle, adam);
      std::filesystem::create_directories(opts.checkpoint_dir);
      corpus::save_bundle(bundle, opts.checkpoint_dir + "/step_" +
                                      std::to_string(adam.step_count()) + ".zsu");
    }
  }

  // Final usage statistics over the whole corpus.
  std::vector<std::int64_t> counts(static_cast<std::size_t>(cfg.codebook_size), 0);
  for (const auto &chunk : chunks) {
    const Tensor z = model.encode_inference(chunk.features);
    const QuantizeResult q = quantize(z, model.codebook()->value);
    for (std::size_t i = 0; i < q.codes.indices.size(); ++i)
      if (chunk.weights[std::min(i * static_cast<std::size_t>(cfg.time_reduction),
                                 chunk.weights.size() - 1)] > 0.0)
        ++counts[static_cast<std::size_t>(q.codes.indices[i])];
  }
  metrics.final_perplexity = perplexity(counts);
  return metrics;
}

VqEncoding encode_utterance(VqVae &model, const Tensor &features) {
  const Tensor z = model.encode_inference(features);
  QuantizeResult q = quantize(z, model.codebook()->value);
  VqEncoding enc;
  enc.codes = std::move(q.codes);
  enc.codes.reduction_factor = model.config().time_reduction;
  enc.code_vectors = std::move(q.quantized);
  return enc;
}

}  // namespace zsu::vq
