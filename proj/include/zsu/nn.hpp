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
#include <random>
#include <string>
#include <vector>

#include "zsu/grad.hpp"

namespace zsu::nn {

using grad::Var;

constexpr double kLeakySlope = 0.01;

// He-style fan-in initialization.
Tensor init_weights(std::vector<std::int64_t> shape, std::int64_t fan_in,
                    std::mt19937_64 &rng);

struct Conv1dLayer {
  Var weight;  // [Cout * Cin * K]
  Var bias;    // [Cout]
  std::int64_t kernel = 3;
  std::int64_t stride = 1;

  Conv1dLayer() = default;
  Conv1dLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t k,
              std::int64_t s, std::mt19937_64 &rng, const std::string &name);
  Var forward(const Var &x) const {
    return grad::conv1d(x, weight, bias, kernel, stride);
  }
};

struct Conv2dLayer {
  Var weight;  // [Cout * Cin * Kh * Kw]
  Var bias;
  std::int64_t kh = 3, kw = 3, sh = 1, sw = 1;

  Conv2dLayer() = default;
  Conv2dLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t kh_,
              std::int64_t kw_, std::mt19937_64 &rng, const std::string &name);
  Var forward(const Var &x) const {
    return grad::conv2d(x, weight, bias, kh, kw, sh, sw);
  }
};

struct BatchNormLayer {
  Var gamma;
  Var beta;
  grad::BatchNormStats stats;

  explicit BatchNormLayer(std::int64_t channels, const std::string &name = "bn");
  Var forward(const Var &x, bool training, bool update_running) {
    return grad::batchnorm(x, gamma, beta, &stats, training, update_running);
  }
};

struct LinearLayer {
  Var weight;  // [Out x In]
  Var bias;

  LinearLayer() = default;
  LinearLayer(std::int64_t in, std::int64_t out, std::mt19937_64 &rng,
              const std::string &name);
  Var forward(const Var &x) const { return grad::linear(x, weight, bias); }
};

// Conv1d -> BatchNorm -> LeakyReLU, the repeated block in every network here.
struct ConvBlock {
  Conv1dLayer conv;
  BatchNormLayer bn;

  ConvBlock(std::int64_t c_in, std::int64_t c_out, std::int64_t k,
            std::int64_t s, std::mt19937_64 &rng, const std::string &name)
      : conv(c_in, c_out, k, s, rng, name), bn(c_out, name + ".bn") {}
  Var forward(const Var &x, bool training, bool update_running) {
    return grad::leaky_relu(bn.forward(conv.forward(x), training, update_running),
                            kLeakySlope);
  }
  void collect(std::vector<Var> &out) const {
    out.push_back(conv.weight);
    out.push_back(conv.bias);
    out.push_back(bn.gamma);
    out.push_back(bn.beta);
  }
};

}  // namespace zsu::nn
