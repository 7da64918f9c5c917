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

#include "zsu/nn.hpp"

#include <cmath>

namespace zsu::nn {

Tensor init_weights(std::vector<std::int64_t> shape, std::int64_t fan_in,
                    std::mt19937_64 &rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

Conv1dLayer::Conv1dLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t k,
                         std::int64_t s, std::mt19937_64 &rng,
                         const std::string &name)
    : kernel(k), stride(s) {
  weight = grad::parameter(init_weights({c_out, c_in, k}, c_in * k, rng),
                           name + ".weight");
  bias = grad::parameter(Tensor({c_out}), name + ".bias");
}

Conv2dLayer::Conv2dLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t kh_,
                         std::int64_t kw_, std::mt19937_64 &rng,
                         const std::string &name)
    : kh(kh_), kw(kw_) {
  weight = grad::parameter(
      init_weights({c_out, c_in, kh_, kw_}, c_in * kh_ * kw_, rng),
      name + ".weight");
  bias = grad::parameter(Tensor({c_out}), name + ".bias");
}

BatchNormLayer::BatchNormLayer(std::int64_t channels, const std::string &name)
    : gamma(grad::parameter(Tensor::full({channels}, 1.0), name + ".gamma")),
      beta(grad::parameter(Tensor({channels}), name + ".beta")),
      stats(channels) {}

LinearLayer::LinearLayer(std::int64_t in, std::int64_t out,
                         std::mt19937_64 &rng, const std::string &name) {
  weight = grad::parameter(init_weights({out, in}, in, rng), name + ".weight");
  bias = grad::parameter(Tensor({out}), name + ".bias");
}

}  // namespace zsu::nn
