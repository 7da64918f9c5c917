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
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "zsu/tensor.hpp"

namespace zsu::grad {

// Reverse-mode autodiff over a dynamically built tape.  Graphs are rebuilt
// every step; nodes own their value, an accumulated gradient, and a closure
// that pushes the gradient into the parents.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // same shape as value, zero until backward touches it
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node &)> backward_fn;
  std::string name;  // used in shape-error messages

  explicit Node(Tensor v, bool rg = false)
      : value(std::move(v)), grad(value.shape()), requires_grad(rg) {}
};

Var parameter(Tensor value, std::string name = "");
Var constant(Tensor value, std::string name = "");

// Seeds the root (with ones unless an upstream gradient is given) and runs
// the tape in reverse topological order.
void backward(const Var &root);
void backward(const Var &root, const Tensor &upstream);

// Elementwise / arithmetic.
Var add(const Var &a, const Var &b);
Var sub(const Var &a, const Var &b);
Var mul(const Var &a, const Var &b);
Var scale(const Var &a, double s);
Var add_scalar(const Var &a, double s);
Var scalar_affine(const Var &a, double scale, double shift);
Var square(const Var &a);
Var exp(const Var &a);
Var softplus(const Var &a);
Var leaky_relu(const Var &a, double negative_slope);
Var stop_gradient(const Var &a);

// Reductions.
Var mean_all(const Var &a);
Var sum_all(const Var &a);
// Mean of squared elements; the workhorse behind the MSE-style loss terms.
Var mean_sq(const Var &a);
// Squared L2 distance between equal-shaped tensors (sum, not mean).
Var l2_distance(const Var &a, const Var &b);
Var mse(const Var &a, const Var &b);
// MSE with a per-row weight (rows of zero weight excluded from the mean).
Var mse_masked(const Var &a, const Var &b, const std::vector<double> &row_weights);

// Linear layer: x [T x In] * W^T [Out x In] + bias [Out] -> [T x Out].
Var linear(const Var &x, const Var &weight, const Var &bias);
Var matmul(const Var &a, const Var &b);

// 1-D convolution over time: x [T x Cin], weight [Cout x Cin x K] flattened,
// bias [Cout], zero "same" padding (odd remainder pads one extra at the end),
// output [ceil(T/stride) x Cout].
Var conv1d(const Var &x, const Var &weight, const Var &bias,
           std::int64_t kernel, std::int64_t stride);

// 2-D convolution: x [H x W x Cin], weight [Cout x Cin x Kh x Kw], "same"
// padding, output [ceil(H/sh) x ceil(W/sw) x Cout].
Var conv2d(const Var &x, const Var &weight, const Var &bias,
           std::int64_t kh, std::int64_t kw, std::int64_t sh, std::int64_t sw);

// Concatenate along columns (channel axis): [T x C1], [T x C2] -> [T x C1+C2].
Var concat_cols(const Var &a, const Var &b);

// Row gather from an embedding table [K x D]; gradients scatter-add into the
// selected rows.
Var embedding_lookup(const Var &table, const std::vector<std::int64_t> &indices);

// Repeat every row r times: [T x C] -> [rT x C].
Var repeat_rows(const Var &x, std::int64_t r);

// View with a different shape (same element count and order).
Var reshape(const Var &x, std::vector<std::int64_t> shape);

// Batch normalization over rows of x [T x C] with per-channel gamma/beta.
// In training mode batch statistics are used (and running stats updated when
// running pointers are given); in inference mode it is an affine map.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  explicit BatchNormStats(std::int64_t channels)
      : running_mean({channels}), running_var(Tensor::full({channels}, 1.0)) {}
};

Var batchnorm(const Var &x, const Var &gamma, const Var &beta,
              BatchNormStats *stats, bool training, bool update_running);

// ---- Optimizer ----

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one bias-corrected update to every parameter from its accumulated
  // gradient, then zeroes the gradients.  Parameters with non-finite
  // gradients are skipped with a warning on stderr.
  void step(const std::vector<Var> &params);
  void zero_grad(const std::vector<Var> &params);

  std::int64_t step_count() const { return step_; }
  const AdamConfig &config() const { return cfg_; }

  // Moment accumulators, exposed for checkpointing.
  std::vector<Tensor> &first_moments() { return m_; }
  std::vector<Tensor> &second_moments() { return v_; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

// ---- Gradient checking ----

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Compares analytic gradients of a scalar loss against central finite
// differences.  The loss closure must rebuild the graph from the current
// parameter values on every call.
GradCheckReport grad_check(const std::function<Var()> &loss,
                           const std::vector<Var> &params, double epsilon,
                           double tolerance);

}  // namespace zsu::grad
