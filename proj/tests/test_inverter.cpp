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

#include <doctest.h>

#include "support.hpp"
#include "zsu/inverter.hpp"

using namespace zsu;
using namespace zsu::inverter;

namespace {

InverterConfig tiny_config() {
  InverterConfig cfg;
  cfg.kernel_scales = {1, 3, 5};
  cfg.scale_channels = 6;
  cfg.multiscale_layers = 2;
  cfg.head_channels = {10};
  cfg.code_dim = 5;
  cfg.output_dim = 12;
  cfg.time_reduction = 2;
  cfg.chunk_length = 16;
  cfg.learning_rate = 2e-4;
  return cfg;
}

std::vector<InverterTrainPair> tiny_pairs(std::uint64_t seed) {
  std::vector<InverterTrainPair> pairs;
  for (int u = 0; u < 2; ++u) {
    const std::int64_t t_z = 20;
    Tensor codes = test::random_tensor({t_z, 5}, seed + static_cast<std::uint64_t>(u));
    Tensor mag({t_z * 2, 12});
    // Magnitude depends deterministically on the codes so it is learnable.
    for (std::int64_t t = 0; t < mag.rows(); ++t)
      for (std::int64_t j = 0; j < 12; ++j)
        mag.at(t, j) = std::abs(codes.at(t / 2, j % 5)) * (1.0 + 0.1 * j);
    pairs.push_back({"u" + std::to_string(u), codes, mag});
  }
  return pairs;
}

}  // namespace

TEST_CASE("upsample_codes repeats each row r times") {
  Tensor codes({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor up = upsample_codes(codes, 3);
  REQUIRE(up.rows() == 6);
  for (std::int64_t t = 0; t < 6; ++t)
    for (std::int64_t j = 0; j < 3; ++j)
      CHECK(up.at(t, j) == codes.at(t / 3, j));
  const Tensor same = upsample_codes(codes, 1);
  for (std::int64_t i = 0; i < codes.numel(); ++i) CHECK(same[i] == codes[i]);
}

TEST_CASE("spec normalizer round trips magnitudes") {
  std::vector<Tensor> mags = {test::random_tensor({8, 4}, 3, 2.0)};
  for (std::int64_t i = 0; i < mags[0].numel(); ++i)
    mags[0][i] = std::abs(mags[0][i]);
  const auto norm = SpecNormalizer::fit(mags, SpectrogramDomain::Log);
  const Tensor z = norm.normalize(mags[0]);
  const Tensor back = norm.denormalize(z);
  for (std::int64_t i = 0; i < back.numel(); ++i) {
    CHECK(back[i] == doctest::Approx(mags[0][i]).epsilon(1e-9));
    CHECK(back[i] >= 0.0);
  }
  // Normalized data is roughly standardized.
  double mean = 0.0;
  for (std::int64_t i = 0; i < z.numel(); ++i) mean += z[i];
  mean /= static_cast<double>(z.numel());
  CHECK(std::abs(mean) < 1e-9);
}

TEST_CASE("linear-domain normalizer is the identity") {
  std::vector<Tensor> mags = {Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0})};
  const auto norm = SpecNormalizer::fit(mags, SpectrogramDomain::Linear);
  const Tensor z = norm.normalize(mags[0]);
  for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == mags[0][i]);
}

TEST_CASE("code2spec preserves length and emits the configured dimension") {
  const InverterConfig cfg = tiny_config();
  Code2Spec model(cfg, 5);
  for (std::int64_t t : {8, 11, 16}) {
    const Tensor up = upsample_codes(test::random_tensor({t, 5}, 7), 1);
    const Tensor out = model.predict(up);
    CHECK(out.rows() == t);
    CHECK(out.cols() == cfg.output_dim);
    CHECK(out.all_finite());
  }
}

TEST_CASE("gan loss formulas match hand evaluation") {
  // Scalar scores: D(real) = 0.3, D(fake) = -0.2.
  Var real = grad::parameter(Tensor::scalar(0.3), "dreal");
  Var fake = grad::parameter(Tensor::scalar(-0.2), "dfake");
  Var fake_det = grad::parameter(Tensor::scalar(-0.2), "dfake_det");

  const auto ls = gan_losses(real, fake, fake_det, GanKind::Lsgan);
  CHECK(ls.generator->value[0] == doctest::Approx((-0.2 - 1.0) * (-0.2 - 1.0)));
  CHECK(ls.discriminator->value[0] ==
        doctest::Approx((-0.2) * (-0.2) + (0.3 - 1.0) * (0.3 - 1.0)));

  const auto w = gan_losses(real, fake, fake_det, GanKind::Wgan);
  CHECK(w.generator->value[0] == doctest::Approx(0.2));
  CHECK(w.discriminator->value[0] == doctest::Approx(-0.2 - 0.3));

  // Generator loss must not touch the detached score and vice versa.
  grad::backward(ls.generator);
  CHECK(fake_det->grad[0] == 0.0);
  CHECK(fake->grad[0] != 0.0);
}

TEST_CASE("lsgan training reduces reconstruction error") {
  InverterConfig cfg = tiny_config();
  cfg.gan_kind = GanKind::Lsgan;
  cfg.gan_weight = 0.1;
  Code2Spec model(cfg, 11);
  Discriminator disc(cfg.output_dim, 12);
  grad::Adam gen_adam({cfg.learning_rate});
  grad::Adam disc_adam({cfg.learning_rate});
  InverterTrainOptions opts;
  opts.steps = 50;
  opts.seed = 11;
  const auto result = train_inverter(model, disc, tiny_pairs(31), opts,
                                     gen_adam, disc_adam);
  REQUIRE(result.metrics.mse.size() == 50);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 5; ++i) {
    first += result.metrics.mse[static_cast<std::size_t>(i)];
    last += result.metrics.mse[result.metrics.mse.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(last < first);
}

TEST_CASE("wgan training clips discriminator weights") {
  InverterConfig cfg = tiny_config();
  cfg.gan_kind = GanKind::Wgan;
  cfg.gan_weight = 1.0;
  Code2Spec model(cfg, 21);
  Discriminator disc(cfg.output_dim, 22);
  grad::Adam gen_adam({cfg.learning_rate});
  grad::Adam disc_adam({cfg.learning_rate});
  InverterTrainOptions opts;
  opts.steps = 10;
  opts.seed = 21;
  train_inverter(model, disc, tiny_pairs(41), opts, gen_adam, disc_adam);
  for (const auto &p : disc.parameters())
    for (std::int64_t i = 0; i < p->value.numel(); ++i)
      CHECK(std::abs(p->value[i]) <= cfg.wgan_clip + 1e-12);
}

TEST_CASE("mse-only training works with the adversarial term disabled") {
  InverterConfig cfg = tiny_config();
  cfg.gan_weight = 0.0;
  cfg.learning_rate = 1e-3;
  Code2Spec model(cfg, 31);
  Discriminator disc(cfg.output_dim, 32);
  grad::Adam gen_adam({cfg.learning_rate});
  grad::Adam disc_adam({cfg.learning_rate});
  InverterTrainOptions opts;
  opts.steps = 80;
  opts.seed = 31;
  const auto result = train_inverter(model, disc, tiny_pairs(51), opts,
                                     gen_adam, disc_adam);
  CHECK(result.metrics.mse.back() < result.metrics.mse.front());
}

TEST_CASE("inverter bundle round trip preserves predictions exactly") {
  const InverterConfig cfg = tiny_config();
  Code2Spec model(cfg, 43);
  SpecNormalizer norm;
  norm.mean = 1.5;
  norm.std = 0.4;
  const auto dir = test::scratch_dir("inv_bundle");
  const std::string path = (dir / "inv.zsu").string();
  corpus::save_bundle(model.to_bundle(norm), path);
  auto [loaded, norm2] = Code2Spec::from_bundle(corpus::load_bundle(path));
  CHECK(norm2.mean == norm.mean);
  CHECK(norm2.std == norm.std);
  const Tensor up = upsample_codes(test::random_tensor({9, 5}, 44), 1);
  const Tensor a = model.predict(up);
  const Tensor b = loaded->predict(up);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("synthesize validates the code dimension against the model") {
  const InverterConfig cfg = tiny_config();
  Code2Spec model(cfg, 55);
  SpecNormalizer norm;
  dsp::StftConfig stft_cfg;  // 1025 bins, not the model's 12
  const Tensor wrong = test::random_tensor({4, 9}, 56);
  CHECK_THROWS_AS(synthesize(model, norm, wrong, stft_cfg, 16000, 2, 1),
                  ConfigError);
}

TEST_CASE("gan kind names round trip") {
  CHECK(gan_kind_from_name("lsgan") == GanKind::Lsgan);
  CHECK(gan_kind_from_name("wgan") == GanKind::Wgan);
  CHECK(gan_kind_name(GanKind::Wgan) == "wgan");
  CHECK_THROWS_AS(gan_kind_from_name("hinge"), ConfigError);
}
