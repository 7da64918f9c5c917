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

#include <cmath>
#include <fstream>

#include <doctest.h>

#include "support.hpp"
#include "zsu/vq.hpp"

using namespace zsu;
using namespace zsu::vq;

namespace {

VqVaeConfig tiny_config() {
  VqVaeConfig cfg;
  cfg.time_reduction = 4;
  cfg.codebook_size = 6;
  cfg.code_dim = 5;
  cfg.speaker_dim = 3;
  cfg.input_dim = 8;
  cfg.stem_channels = 2;
  cfg.channels = {12, 16};
  cfg.chunk_length = 16;
  cfg.learning_rate = 1e-3;
  return cfg;
}

std::vector<TrainUtterance> tiny_corpus(std::int64_t frames = 48) {
  std::vector<TrainUtterance> utts;
  for (int u = 0; u < 3; ++u) {
    Tensor f({frames, 8});
    for (std::int64_t t = 0; t < frames; ++t)
      for (std::int64_t j = 0; j < 8; ++j)
        f.at(t, j) = std::sin(0.3 * static_cast<double>(t) * (j + 1) + u) +
                     0.1 * static_cast<double>(u);
    utts.push_back({"u" + std::to_string(u), f, u % 2});
  }
  return utts;
}

std::string file_bytes(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("quantize matches brute force and breaks ties to the lowest index") {
  const Tensor latents = test::random_tensor({12, 4}, 5);
  const Tensor codebook = test::random_tensor({7, 4}, 6);
  const auto result = quantize(latents, codebook);
  for (std::int64_t t = 0; t < 12; ++t) {
    std::int64_t best = 0;
    double best_d = 1e300;
    for (std::int64_t c = 0; c < 7; ++c) {
      double d = 0.0;
      for (std::int64_t j = 0; j < 4; ++j) {
        const double diff = latents.at(t, j) - codebook.at(c, j);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    CHECK(result.codes.indices[static_cast<std::size_t>(t)] == best);
  }

  // Exact tie: duplicate codebook rows; the lower index must win.
  Tensor dup({3, 2}, {1.0, 1.0, 2.0, 2.0, 1.0, 1.0});
  Tensor z({1, 2}, {1.0, 1.0});
  CHECK(quantize(z, dup).codes.indices[0] == 0);
}

TEST_CASE("config validation rejects bad settings") {
  VqVaeConfig cfg = tiny_config();
  cfg.time_reduction = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.chunk_length = 17;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.time_reduction = 8;  // needs three stride-2 layers, only two available
  cfg.chunk_length = 16;
  CHECK_THROWS_AS(cfg.stride_plan(), ConfigError);
}

TEST_CASE("encode emits ceil(T/r) latents and decode emits r times as many frames") {
  const VqVaeConfig cfg = tiny_config();
  VqVae model(cfg, 2, 11);
  for (std::int64_t t : {16, 17, 19, 20}) {
    const Tensor features = test::random_tensor({t, 8}, 21);
    const Tensor z = model.encode_inference(features);
    const std::int64_t t_z = (t + cfg.time_reduction - 1) / cfg.time_reduction;
    CHECK(z.rows() == t_z);
    CHECK(z.cols() == cfg.code_dim);
    const auto q = quantize(z, model.codebook()->value);
    const Var rec = model.decode(grad::constant(q.quantized), 0, false);
    CHECK(rec->value.rows() == cfg.time_reduction * t_z);
    CHECK(rec->value.cols() == cfg.input_dim);
  }
}

TEST_CASE("loss terms compose into the total with the commitment weight") {
  const VqVaeConfig cfg = tiny_config();
  VqVae model(cfg, 2, 13);
  const Tensor features = test::random_tensor({16, 8}, 14);
  VqLossTerms terms;
  CodeSequence codes;
  const Var loss = model.loss_graph(features, 1, {}, &terms, &codes, true);
  CHECK(std::isfinite(terms.total));
  CHECK(terms.reconstruction >= 0.0);
  CHECK(terms.codebook >= 0.0);
  CHECK(terms.commitment >= 0.0);
  // The commitment entry is stored with its gamma weight applied.
  CHECK(terms.total ==
        doctest::Approx(terms.reconstruction + terms.codebook +
                        terms.commitment).epsilon(1e-10));
  CHECK(loss->value[0] == doctest::Approx(terms.total).epsilon(1e-12));
  CHECK(codes.indices.size() == 4);
  CHECK(codes.reduction_factor == cfg.time_reduction);
}

TEST_CASE("codebook receives gradient only from the codebook term") {
  // 2-code, 2-frame toy built from the same ops the model uses.
  Tensor zv({2, 2}, {0.0, 0.1, 1.0, 0.9});
  Tensor cbv({2, 2}, {0.0, 0.0, 1.0, 1.0});
  Var z = grad::parameter(zv, "z");
  Var cb = grad::parameter(cbv, "cb");
  const auto q = quantize(zv, cbv);
  Var e = grad::embedding_lookup(cb, q.codes.indices);

  // Reconstruction path through the straight-through estimator.
  Var dec_in = grad::add(z, grad::stop_gradient(grad::sub(e, z)));
  Var recon = grad::mean_sq(dec_in);
  grad::backward(recon);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(cb->grad[i] == 0.0);
  bool z_touched = false;
  for (std::int64_t i = 0; i < 4; ++i) z_touched |= (z->grad[i] != 0.0);
  CHECK(z_touched);

  // Commitment term: gradient to the encoder only.
  Var z2 = grad::parameter(zv, "z2");
  Var cb2 = grad::parameter(cbv, "cb2");
  Var e2 = grad::embedding_lookup(cb2, q.codes.indices);
  Var commit = grad::mean_sq(grad::sub(z2, grad::stop_gradient(e2)));
  grad::backward(commit);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(cb2->grad[i] == 0.0);

  // Codebook term: gradient to the codebook only.
  Var z3 = grad::parameter(zv, "z3");
  Var cb3 = grad::parameter(cbv, "cb3");
  Var e3 = grad::embedding_lookup(cb3, q.codes.indices);
  Var book = grad::mean_sq(grad::sub(grad::stop_gradient(z3), e3));
  grad::backward(book);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(z3->grad[i] == 0.0);
  bool cb_touched = false;
  for (std::int64_t i = 0; i < 4; ++i) cb_touched |= (cb3->grad[i] != 0.0);
  CHECK(cb_touched);
}

TEST_CASE("short training run reduces the loss") {
  const VqVaeConfig cfg = tiny_config();
  VqVae model(cfg, 2, 3);
  grad::Adam adam({cfg.learning_rate});
  VqTrainOptions opts;
  opts.steps = 60;
  opts.seed = 3;
  const auto metrics = train_vqvae(model, tiny_corpus(), opts, adam);
  REQUIRE(metrics.per_step.size() == 60);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 6; ++i) {
    first += metrics.per_step[static_cast<std::size_t>(i)].total;
    last += metrics.per_step[metrics.per_step.size() - 1 - static_cast<std::size_t>(i)].total;
  }
  CHECK(last < first);
  CHECK(metrics.final_perplexity >= 1.0);
}

TEST_CASE("bundle round trip preserves the model exactly") {
  const VqVaeConfig cfg = tiny_config();
  VqVae model(cfg, 2, 29);
  const auto dir = test::scratch_dir("vq_bundle");
  const std::string path = (dir / "m.zsu").string();
  corpus::save_bundle(model.to_bundle(), path);
  auto loaded = VqVae::from_bundle(corpus::load_bundle(path));
  const Tensor features = test::random_tensor({20, 8}, 30);
  const auto a = encode_utterance(model, features);
  const auto b = encode_utterance(*loaded, features);
  CHECK(a.codes.indices == b.codes.indices);
  REQUIRE(a.code_vectors.same_shape(b.code_vectors));
  for (std::int64_t i = 0; i < a.code_vectors.numel(); ++i)
    CHECK(a.code_vectors[i] == b.code_vectors[i]);
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run bit for bit") {
  const VqVaeConfig cfg = tiny_config();
  const auto corpus_data = tiny_corpus();
  const auto dir = test::scratch_dir("vq_resume");

  // Uninterrupted: 6 steps, checkpointing every 3.
  VqVae full(cfg, 2, 7);
  grad::Adam full_adam({cfg.learning_rate});
  VqTrainOptions opts;
  opts.steps = 6;
  opts.checkpoint_every = 3;
  opts.checkpoint_dir = (dir / "full").string();
  opts.seed = 7;
  train_vqvae(full, corpus_data, opts, full_adam);

  // Resume from the step-3 checkpoint and run the remaining 3 steps.
  const auto ckpt = corpus::load_bundle((dir / "full" / "step_3.zsu").string());
  auto resumed = VqVae::from_bundle(ckpt);
  grad::Adam resumed_adam({cfg.learning_rate});
  resumed->load_optimizer(ckpt, resumed_adam);
  CHECK(resumed_adam.step_count() == 3);
  VqTrainOptions rest = opts;
  rest.steps = 3;
  rest.checkpoint_every = 0;
  train_vqvae(*resumed, corpus_data, rest, resumed_adam);

  corpus::ModelBundle ba = full.to_bundle();
  full.save_optimizer(ba, full_adam);
  corpus::ModelBundle bb = resumed->to_bundle();
  resumed->save_optimizer(bb, resumed_adam);
  const std::string pa = (dir / "a.zsu").string();
  const std::string pb = (dir / "b.zsu").string();
  corpus::save_bundle(ba, pa);
  corpus::save_bundle(bb, pb);
  CHECK(file_bytes(pa) == file_bytes(pb));
}

TEST_CASE("perplexity of a histogram") {
  CHECK(perplexity({10, 0, 0, 0}) == doctest::Approx(1.0));
  CHECK(perplexity({5, 5, 5, 5}) == doctest::Approx(4.0));
  CHECK(perplexity({0, 0}) == doctest::Approx(0.0));
}

TEST_CASE("encode_utterance covers every input frame") {
  const VqVaeConfig cfg = tiny_config();
  VqVae model(cfg, 2, 41);
  const Tensor features = test::random_tensor({18, 8}, 42);
  const auto enc = encode_utterance(model, features);
  CHECK(static_cast<std::int64_t>(enc.codes.indices.size()) ==
        (18 + cfg.time_reduction - 1) / cfg.time_reduction);
  CHECK(enc.codes.codebook_size == cfg.codebook_size);
  for (auto c : enc.codes.indices) {
    CHECK(c >= 0);
    CHECK(c < cfg.codebook_size);
  }
}
