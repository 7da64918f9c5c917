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
#include "zsu/nn.hpp"
#include "zsu/tensor.hpp"

namespace zsu::vq {

using grad::Var;

enum class CodebookInit { KMeans, RandomNormal };

struct VqVaeConfig {
  std::int64_t time_reduction = 4;  // encoder stride product, in {1,2,4,8}
  std::int64_t codebook_size = 256;
  std::int64_t code_dim = 64;      // D_e
  std::int64_t speaker_dim = 32;   // D_v
  std::int64_t input_dim = 39;     // MFCC-39 by default
  double commitment_cost = 0.25;   // gamma
  std::int64_t stem_channels = 8;  // 2-D conv stem output channels
  std::vector<std::int64_t> channels = {64, 128, 256};
  std::int64_t chunk_length = 128;  // frames per training chunk
  CodebookInit codebook_init = CodebookInit::KMeans;
  double learning_rate = 1e-3;

  void validate() const;
  std::vector<std::int64_t> stride_plan() const;  // factors of 2 totalling r
};

// Nearest-codebook assignment (L2, ties to the lowest index).
struct QuantizeResult {
  CodeSequence codes;
  Tensor quantized;  // T_z x D_e codebook rows
};
QuantizeResult quantize(const Tensor &latents, const Tensor &codebook);

struct VqLossTerms {
  double total = 0.0;
  double reconstruction = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
};

class VqVae {
 public:
  VqVae(const VqVaeConfig &cfg, std::int64_t num_speakers, std::uint64_t seed);

  const VqVaeConfig &config() const { return cfg_; }
  std::int64_t num_speakers() const { return num_speakers_; }

  // Continuous latents: T_z x D_e with T_z = ceil(T / r).
  Var encode(const Var &features, bool training);
  Tensor encode_inference(const Tensor &features);

  // Reconstruction from quantized codes and a speaker id: (r * T_z) x D.
  Var decode(const Var &quantized, std::int64_t speaker, bool training);

  // Full training-step graph.  row_weights masks padded frames out of the
  // reconstruction loss.  Returns the scalar total-loss Var; the individual
  // term values land in *terms.
  Var loss_graph(const Tensor &features, std::int64_t speaker,
                 const std::vector<double> &row_weights, VqLossTerms *terms,
                 CodeSequence *codes_out, bool training);

  Var codebook() { return codebook_; }
  Var speaker_table() { return speaker_table_; }
  std::vector<Var> parameters() const;

  void init_codebook_from(const Tensor &vectors);

  corpus::ModelBundle to_bundle() const;
  static std::unique_ptr<VqVae> from_bundle(const corpus::ModelBundle &bundle);

  // Optimizer-state round trip for exact training resume.
  void save_optimizer(corpus::ModelBundle &bundle, const grad::Adam &adam) const;
  void load_optimizer(const corpus::ModelBundle &bundle, grad::Adam &adam) const;

 private:
  VqVaeConfig cfg_;
  std::int64_t num_speakers_ = 0;

  nn::Conv2dLayer stem_;
  std::unique_ptr<nn::BatchNormLayer> stem_bn_;
  std::vector<nn::ConvBlock> enc_blocks_;
  nn::Conv1dLayer enc_out_;
  std::vector<nn::ConvBlock> dec_blocks_;
  nn::Conv1dLayer dec_out_;
  Var codebook_;       // K x D_e
  Var speaker_table_;  // L x D_v
};

struct TrainUtterance {
  std::string id;
  Tensor features;  // T x D
  std::int64_t speaker = 0;
};

struct VqTrainOptions {
  std::int64_t steps = 500;
  std::int64_t checkpoint_every = 0;  // 0 disables intermediate checkpoints
  std::string checkpoint_dir;
  std::uint64_t seed = 0;
};

struct VqTrainMetrics {
  std::vector<VqLossTerms> per_step;
  std::vector<double> codebook_perplexity;  // per step
  double final_perplexity = 0.0;
};

// Deterministic single-loop trainer; chunks utterances to fixed windows and
// visits them in a fixed order.  Throws NumericError on NaN loss.
VqTrainMetrics train_vqvae(VqVae &model, const std::vector<TrainUtterance> &data,
                           const VqTrainOptions &opts, grad::Adam &adam);

// Codebook usage perplexity of a code histogram.
double perplexity(const std::vector<std::int64_t> &code_counts);

struct VqEncoding {
  CodeSequence codes;
  Tensor code_vectors;  // T_z x D_e continuous codebook rows
};

// Inference-mode encoding of a whole utterance.
VqEncoding encode_utterance(VqVae &model, const Tensor &features);

}  // namespace zsu::vq
