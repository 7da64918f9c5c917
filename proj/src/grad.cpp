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

#include "zsu/grad.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

namespace zsu::grad {

namespace {

void require(bool cond, const std::string &msg) {
  if (!cond) throw DataError(msg);
}

Var make_node(Tensor value, std::vector<Var> parents,
              std::function<void(Node &)> backward_fn) {
  auto n = std::make_shared<Node>(std::move(value));
  for (const auto &p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

std::int64_t same_pad_begin(std::int64_t in, std::int64_t kernel,
                            std::int64_t stride, std::int64_t out) {
  const std::int64_t total = std::max<std::int64_t>((out - 1) * stride + kernel - in, 0);
  return total / 2;  // odd remainder pads one extra at the end
}

}  // namespace

Var parameter(Tensor value, std::string name) {
  auto n = std::make_shared<Node>(std::move(value), true);
  n->name = std::move(name);
  return n;
}

Var constant(Tensor value, std::string name) {
  auto n = std::make_shared<Node>(std::move(value), false);
  n->name = std::move(name);
  return n;
}

void backward(const Var &root, const Tensor &upstream) {
  require(root != nullptr, "backward: null root");
  require(upstream.shape() == root->value.shape(),
          "backward: upstream gradient shape mismatch");
  // Post-order DFS, then replay in reverse.
  std::vector<Node *> order;
  std::unordered_set<Node *> seen;
  std::vector<std::pair<Node *, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto &[node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node *p = node->parents[idx++].get();
      if (!seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad = upstream;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node *n = *it;
    if (n != root.get() && n->grad.shape() != n->value.shape())
      n->grad = Tensor(n->value.shape());
    if (n->backward_fn) n->backward_fn(*n);
  }
}

void backward(const Var &root) {
  backward(root, Tensor::full(root->value.shape(), 1.0));
}

// ---- elementwise ----

Var add(const Var &a, const Var &b) {
  require(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = a->value[i] + b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node &self) {
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
      if (a->requires_grad) a->grad[i] += self.grad[i];
      if (b->requires_grad) b->grad[i] += self.grad[i];
    }
  });
}

Var sub(const Var &a, const Var &b) {
  require(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = a->value[i] - b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node &self) {
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
      if (a->requires_grad) a->grad[i] += self.grad[i];
      if (b->requires_grad) b->grad[i] -= self.grad[i];
    }
  });
}

Var mul(const Var &a, const Var &b) {
  require(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = a->value[i] * b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node &self) {
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
      if (a->requires_grad) a->grad[i] += self.grad[i] * b->value[i];
      if (b->requires_grad) b->grad[i] += self.grad[i] * a->value[i];
    }
  });
}

Var scale(const Var &a, double s) { return scalar_affine(a, s, 0.0); }
Var add_scalar(const Var &a, double s) { return scalar_affine(a, 1.0, s); }

Var scalar_affine(const Var &a, double sc, double shift) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = sc * a->value[i] + shift;
  return make_node(std::move(out), {a}, [a, sc](Node &self) {
    for (std::int64_t i = 0; i < self.grad.numel(); ++i)
      a->grad[i] += sc * self.grad[i];
  });
}

Var square(const Var &a) { return mul(a, a); }

Var exp(const Var &a) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::exp(a->value[i]);
  return make_node(std::move(out), {a}, [a](Node &self) {
    for (std::int64_t i = 0; i < self.grad.numel(); ++i)
      a->grad[i] += self.grad[i] * self.value[i];
  });
}

Var softplus(const Var &a) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double x = a->value[i];
    out[i] = x > 30.0 ? x : std::log1p(std::exp(x));
  }
  return make_node(std::move(out), {a}, [a](Node &self) {
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
      const double x = a->value[i];
      const double sig = 1.0 / (1.0 + std::exp(-x));
      a->grad[i] += self.grad[i] * sig;
    }
  });
}

Var leaky_relu(const Var &a, double negative_slope) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double x = a->value[i];
    out[i] = x >= 0.0 ? x : negative_slope * x;
  }
  return make_node(std::move(out), {a}, [a, negative_slope](Node &self) {
    for (std::int64_t i = 0; i < self.grad.numel(); ++i)
      a->grad[i] += self.grad[i] * (a->value[i] >= 0.0 ? 1.0 : negative_slope);
  });
}

Var stop_gradient(const Var &a) {
  // Value passes through; no backward closure, no gradient flow.
  auto n = std::make_shared<Node>(a->value, false);
  return n;
}

// ---- reductions ----

Var sum_all(const Var &a) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make_node(Tensor::scalar(s), {a}, [a](Node &self) {
    const double g = self.grad[0];
    for (std::int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g;
  });
}

Var mean_all(const Var &a) {
  const double inv = 1.0 / static_cast<double>(a->value.numel());
  double s = 0.0;
  for (std::int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make_node(Tensor::scalar(s * inv), {a}, [a, inv](Node &self) {
    const double g = self.grad[0] * inv;
    for (std::int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g;
  });
}

Var mean_sq(const Var &a) {
  const double inv = 1.0 / static_cast<double>(a->value.numel());
  double s = 0.0;
  for (std::int64_t i = 0; i < a->value.numel(); ++i)
    s += a->value[i] * a->value[i];
  return make_node(Tensor::scalar(s * inv), {a}, [a, inv](Node &self) {
    const double g = self.grad[0] * inv * 2.0;
    for (std::int64_t i = 0; i < a->grad.numel(); ++i)
      a->grad[i] += g * a->value[i];
  });
}

Var l2_distance(const Var &a, const Var &b) { return sum_all(square(sub(a, b))); }

Var mse(const Var &a, const Var &b) { return mean_sq(sub(a, b)); }

Var mse_masked(const Var &a, const Var &b,
               const std::vector<double> &row_weights) {
  require(a->value.same_shape(b->value), "mse_masked: shape mismatch");
  require(static_cast<std::int64_t>(row_weights.size()) == a->value.rows(),
          "mse_masked: weight count mismatch");
  const std::int64_t cols = a->value.cols();
  double wsum = 0.0;
  for (double w : row_weights) wsum += w;
  require(wsum > 0.0, "mse_masked: all rows masked out");
  const double inv = 1.0 / (wsum * static_cast<double>(cols));
  double s = 0.0;
  for (std::int64_t r = 0; r < a->value.rows(); ++r) {
    const double w = row_weights[static_cast<std::size_t>(r)];
    if (w == 0.0) continue;
    for (std::int64_t c = 0; c < cols; ++c) {
      const double d = a->value.at(r, c) - b->value.at(r, c);
      s += w * d * d;
    }
  }
  return make_node(Tensor::scalar(s * inv), {a, b},
                   [a, b, row_weights, inv, cols](Node &self) {
                     const double g = self.grad[0] * inv * 2.0;
                     for (std::int64_t r = 0; r < a->value.rows(); ++r) {
                       const double w = row_weights[static_cast<std::size_t>(r)];
                       if (w == 0.0) continue;
                       for (std::int64_t c = 0; c < cols; ++c) {
                         const double d = g * w * (a->value.at(r, c) - b->value.at(r, c));
                         if (a->requires_grad) a->grad.at(r, c) += d;
                         if (b->requires_grad) b->grad.at(r, c) -= d;
                       }
                     }
                   });
}

// ---- linear algebra ----

Var matmul(const Var &a, const Var &b) {
  require(a->value.rank() == 2 && b->value.rank() == 2, "matmul: rank-2 required");
  require(a->value.cols() == b->value.rows(), "matmul: inner dimension mismatch");
  const std::int64_t n = a->value.rows(), k = a->value.cols(), m = b->value.cols();
  Tensor out({n, m});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::int64_t p = 0; p < k; ++p) s += a->value.at(i, p) * b->value.at(p, j);
      out.at(i, j) = s;
    }
  return make_node(std::move(out), {a, b}, [a, b, n, k, m](Node &self) {
    if (a->requires_grad)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::int64_t j = 0; j < m; ++j)
            s += self.grad.at(i, j) * b->value.at(p, j);
          a->grad.at(i, p) += s;
        }
    if (b->requires_grad)
      for (std::int64_t p = 0; p < k; ++p)
        for (std::int64_t j = 0; j < m; ++j) {
          double s = 0.0;
          for (std::int64_t i = 0; i < n; ++i)
            s += a->value.at(i, p) * self.grad.at(i, j);
          b->grad.at(p, j) += s;
        }
  });
}

Var linear(const Var &x, const Var &weight, const Var &bias) {
  require(x->value.rank() == 2, "linear: input must be T x In");
  require(weight->value.rank() == 2, "linear: weight must be Out x In");
  require(x->value.cols() == weight->value.cols(),
          "linear: input dim does not match weight");
  const std::int64_t t = x->value.rows();
  const std::int64_t in = x->value.cols();
  const std::int64_t out_dim = weight->value.rows();
  require(bias->value.numel() == out_dim, "linear: bias size mismatch");
  Tensor out({t, out_dim});
  for (std::int64_t i = 0; i < t; ++i)
    for (std::int64_t o = 0; o < out_dim; ++o) {
      double s = bias->value[o];
      for (std::int64_t j = 0; j < in; ++j)
        s += x->value.at(i, j) * weight->value.at(o, j);
      out.at(i, o) = s;
    }
  return make_node(std::move(out), {x, weight, bias},
                   [x, weight, bias, t, in, out_dim](Node &self) {
    for (std::int64_t i = 0; i < t; ++i)
      for (std::int64_t o = 0; o < out_dim; ++o) {
        const double g = self.grad.at(i, o);
        if (g == 0.0) continue;
        if (bias->requires_grad) bias->grad[o] += g;
        for (std::int64_t j = 0; j < in; ++j) {
          if (x->requires_grad) x->grad.at(i, j) += g * weight->value.at(o, j);
          if (weight->requires_grad) weight->grad.at(o, j) += g * x->value.at(i, j);
        }
      }
  });
}

// ---- convolutions ----

Var conv1d(const Var &x, const Var &weight, const Var &bias,
           std::int64_t kernel, std::int64_t stride) {
  require(stride >= 1, "conv1d: stride must be >= 1");
  require(x->value.rank() == 2, "conv1d: input must be T x Cin");
  const std::int64_t t_in = x->value.rows();
  const std::int64_t c_in = x->value.cols();
  require(weight->value.numel() % (c_in * kernel) == 0,
          "conv1d: weight size does not match Cin x K");
  const std::int64_t c_out = weight->value.numel() / (c_in * kernel);
  require(bias->value.numel() == c_out, "conv1d: bias size mismatch");
  const std::int64_t t_out = (t_in + stride - 1) / stride;
  const std::int64_t pad = same_pad_begin(t_in, kernel, stride, t_out);

  auto widx = [c_in, kernel](std::int64_t co, std::int64_t ci, std::int64_t k) {
    return (co * c_in + ci) * kernel + k;
  };

  Tensor out({t_out, c_out});
  for (std::int64_t t = 0; t < t_out; ++t)
    for (std::int64_t co = 0; co < c_out; ++co) {
      double s = bias->value[co];
      for (std::int64_t k = 0; k < kernel; ++k) {
        const std::int64_t ti = t * stride + k - pad;
        if (ti < 0 || ti >= t_in) continue;
        for (std::int64_t ci = 0; ci < c_in; ++ci)
          s += weight->value[widx(co, ci, k)] * x->value.at(ti, ci);
      }
      out.at(t, co) = s;
    }
  return make_node(
      std::move(out), {x, weight, bias},
      [x, weight, bias, kernel, stride, t_in, c_in, c_out, t_out, pad,
       widx](Node &self) {
        for (std::int64_t t = 0; t < t_out; ++t)
          for (std::int64_t co = 0; co < c_out; ++co) {
            const double g = self.grad.at(t, co);
            if (g == 0.0) continue;
            if (bias->requires_grad) bias->grad[co] += g;
            for (std::int64_t k = 0; k < kernel; ++k) {
              const std::int64_t ti = t * stride + k - pad;
              if (ti < 0 || ti >= t_in) continue;
              for (std::int64_t ci = 0; ci < c_in; ++ci) {
                if (x->requires_grad)
                  x->grad.at(ti, ci) += g * weight->value[widx(co, ci, k)];
                if (weight->requires_grad)
                  weight->grad[widx(co, ci, k)] += g * x->value.at(ti, ci);
              }
            }
          }
      });
}

Var conv2d(const Var &x, const Var &weight, const Var &bias, std::int64_t kh,
           std::int64_t kw, std::int64_t sh, std::int64_t sw) {
  require(sh >= 1 && sw >= 1, "conv2d: strides must be >= 1");
  require(x->value.rank() == 3, "conv2d: input must be H x W x Cin");
  const std::int64_t h_in = x->value.dim(0);
  const std::int64_t w_in = x->value.dim(1);
  const std::int64_t c_in = x->value.dim(2);
  require(weight->value.numel() % (c_in * kh * kw) == 0,
          "conv2d: weight size does not match Cin x Kh x Kw");
  const std::int64_t c_out = weight->value.numel() / (c_in * kh * kw);
  require(bias->value.numel() == c_out, "conv2d: bias size mismatch");
  const std::int64_t h_out = (h_in + sh - 1) / sh;
  const std::int64_t w_out = (w_in + sw - 1) / sw;
  const std::int64_t pad_h = same_pad_begin(h_in, kh, sh, h_out);
  const std::int64_t pad_w = same_pad_begin(w_in, kw, sw, w_out);

  auto xin = [w_in, c_in](std::int64_t h, std::int64_t w, std::int64_t c) {
    return (h * w_in + w) * c_in + c;
  };
  auto xout = [w_out, c_out](std::int64_t h, std::int64_t w, std::int64_t c) {
    return (h * w_out + w) * c_out + c;
  };
  auto widx = [c_in, kh, kw](std::int64_t co, std::int64_t ci, std::int64_t a,
                             std::int64_t b) {
    return ((co * c_in + ci) * kh + a) * kw + b;
  };

  Tensor out({h_out, w_out, c_out});
  for (std::int64_t h = 0; h < h_out; ++h)
    for (std::int64_t w = 0; w < w_out; ++w)
      for (std::int64_t co = 0; co < c_out; ++co) {
        double s = bias->value[co];
        for (std::int64_t a = 0; a < kh; ++a) {
          const std::int64_t hi = h * sh + a - pad_h;
          if (hi < 0 || hi >= h_in) continue;
          for (std::int64_t b = 0; b < kw; ++b) {
            const std::int64_t wi = w * sw + b - pad_w;
            if (wi < 0 || wi >= w_in) continue;
            for (std::int64_t ci = 0; ci < c_in; ++ci)
              s += weight->value[widx(co, ci, a, b)] * x->value[xin(hi, wi, ci)];
          }
        }
        out[xout(h, w, co)] = s;
      }
  return make_node(
      std::move(out), {x, weight, bias},
      [x, weight, bias, kh, kw, sh, sw, h_in, w_in, c_in, c_out, h_out, w_out,
       pad_h, pad_w, xin, xout, widx](Node &self) {
        for (std::int64_t h = 0; h < h_out; ++h)
          for (std::int64_t w = 0; w < w_out; ++w)
            for (std::int64_t co = 0; co < c_out; ++co) {
              const double g = self.grad[xout(h, w, co)];
              if (g == 0.0) continue;
              if (bias->requires_grad) bias->grad[co] += g;
              for (std::int64_t a = 0; a < kh; ++a) {
                const std::int64_t hi = h * sh + a - pad_h;
                if (hi < 0 || hi >= h_in) continue;
                for (std::int64_t b = 0; b < kw; ++b) {
                  const std::int64_t wi = w * sw + b - pad_w;
                  if (wi < 0 || wi >= w_in) continue;
                  for (std::int64_t ci = 0; ci < c_in; ++ci) {
                    if (x->requires_grad)
                      x->grad[xin(hi, wi, ci)] += g * weight->value[widx(co, ci, a, b)];
                    if (weight->requires_grad)
                      weight->grad[widx(co, ci, a, b)] += g * x->value[xin(hi, wi, ci)];
                  }
                }
              }
            }
      });
}

// ---- structure ----

Var concat_cols(const Var &a, const Var &b) {
  require(a->value.rank() == 2 && b->value.rank() == 2, "concat: rank-2 required");
  require(a->value.rows() == b->value.rows(), "concat: row count mismatch");
  const std::int64_t t = a->value.rows();
  const std::int64_t ca = a->value.cols(), cb = b->value.cols();
  Tensor out({t, ca + cb});
  for (std::int64_t i = 0; i < t; ++i) {
    for (std::int64_t j = 0; j < ca; ++j) out.at(i, j) = a->value.at(i, j);
    for (std::int64_t j = 0; j < cb; ++j) out.at(i, ca + j) = b->value.at(i, j);
  }
  return make_node(std::move(out), {a, b}, [a, b, t, ca, cb](Node &self) {
    for (std::int64_t i = 0; i < t; ++i) {
      if (a->requires_grad)
        for (std::int64_t j = 0; j < ca; ++j) a->grad.at(i, j) += self.grad.at(i, j);
      if (b->requires_grad)
        for (std::int64_t j = 0; j < cb; ++j) b->grad.at(i, j) += self.grad.at(i, ca + j);
    }
  });
}

Var embedding_lookup(const Var &table, const std::vector<std::int64_t> &indices) {
  require(table->value.rank() == 2, "embedding_lookup: table must be K x D");
  const std::int64_t k = table->value.rows();
  const std::int64_t d = table->value.cols();
  const std::int64_t t = static_cast<std::int64_t>(indices.size());
  Tensor out({t, d});
  for (std::int64_t i = 0; i < t; ++i) {
    const std::int64_t idx = indices[static_cast<std::size_t>(i)];
    require(idx >= 0 && idx < k, "embedding_lookup: index out of range");
    for (std::int64_t j = 0; j < d; ++j) out.at(i, j) = table->value.at(idx, j);
  }
  return make_node(std::move(out), {table}, [table, indices, d](Node &self) {
    for (std::int64_t i = 0; i < self.value.rows(); ++i) {
      const std::int64_t idx = indices[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < d; ++j)
        table->grad.at(idx, j) += self.grad.at(i, j);
    }
  });
}

Var repeat_rows(const Var &x, std::int64_t r) {
  require(r >= 1, "repeat_rows: factor must be >= 1");
  require(x->value.rank() == 2, "repeat_rows: rank-2 required");
  const std::int64_t t = x->value.rows(), c = x->value.cols();
  Tensor out({t * r, c});
  for (std::int64_t i = 0; i < t; ++i)
    for (std::int64_t k = 0; k < r; ++k)
      for (std::int64_t j = 0; j < c; ++j)
        out.at(i * r + k, j) = x->value.at(i, j);
  return make_node(std::move(out), {x}, [x, r, t, c](Node &self) {
    for (std::int64_t i = 0; i < t; ++i)
      for (std::int64_t k = 0; k < r; ++k)
        for (std::int64_t j = 0; j < c; ++j)
          x->grad.at(i, j) += self.grad.at(i * r + k, j);
  });
}

Var reshape(const Var &x, std::vector<std::int64_t> shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_node(std::move(out), {x}, [x](Node &self) {
    for (std::int64_t i = 0; i < self.grad.numel(); ++i)
      x->grad[i] += self.grad[i];
  });
}

Var batchnorm(const Var &x, const Var &gamma, const Var &beta,
              BatchNormStats *stats, bool training, bool update_running) {
  require(x->value.rank() == 2, "batchnorm: input must be T x C");
  const std::int64_t t = x->value.rows(), c = x->value.cols();
  require(gamma->value.numel() == c && beta->value.numel() == c,
          "batchnorm: gamma/beta channel mismatch");
  require(stats != nullptr, "batchnorm: stats required");
  const double eps = stats->epsilon;

  if (!training) {
    // Pure affine map from running statistics.
    Tensor out({t, c});
    for (std::int64_t j = 0; j < c; ++j) {
      const double inv_std = 1.0 / std::sqrt(stats->running_var[j] + eps);
      const double a = gamma->value[j] * inv_std;
      const double b = beta->value[j] - a * stats->running_mean[j];
      for (std::int64_t i = 0; i < t; ++i) out.at(i, j) = a * x->value.at(i, j) + b;
    }
    Tensor scale_cache({c});
    for (std::int64_t j = 0; j < c; ++j)
      scale_cache[j] = gamma->value[j] / std::sqrt(stats->running_var[j] + eps);
    Tensor rm = stats->running_mean;
    Tensor rv = stats->running_var;
    return make_node(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, t, c, rm, rv, eps](Node &self) {
      for (std::int64_t j = 0; j < c; ++j) {
        const double inv_std = 1.0 / std::sqrt(rv[j] + eps);
        for (std::int64_t i = 0; i < t; ++i) {
          const double g = self.grad.at(i, j);
          if (x->requires_grad) x->grad.at(i, j) += g * gamma->value[j] * inv_std;
          if (gamma->requires_grad)
            gamma->grad[j] += g * (x->value.at(i, j) - rm[j]) * inv_std;
          if (beta->requires_grad) beta->grad[j] += g;
        }
      }
    });
  }

  require(t >= 1, "batchnorm: empty batch");
  Tensor mean({c}), var({c});
  for (std::int64_t j = 0; j < c; ++j) {
    double m = 0.0;
    for (std::int64_t i = 0; i < t; ++i) m += x->value.at(i, j);
    m /= static_cast<double>(t);
    double v = 0.0;
    for (std::int64_t i = 0; i < t; ++i) {
      const double d = x->value.at(i, j) - m;
      v += d * d;
    }
    v /= static_cast<double>(t);
    mean[j] = m;
    var[j] = v;
  }
  if (update_running) {
    const double mom = stats->momentum;
    for (std::int64_t j = 0; j < c; ++j) {
      stats->running_mean[j] = (1.0 - mom) * stats->running_mean[j] + mom * mean[j];
      stats->running_var[j] = (1.0 - mom) * stats->running_var[j] + mom * var[j];
    }
  }
  Tensor out({t, c});
  Tensor xhat({t, c});
  for (std::int64_t j = 0; j < c; ++j) {
    const double inv_std = 1.0 / std::sqrt(var[j] + eps);
    for (std::int64_t i = 0; i < t; ++i) {
      const double xh = (x->value.at(i, j) - mean[j]) * inv_std;
      xhat.at(i, j) = xh;
      out.at(i, j) = gamma->value[j] * xh + beta->value[j];
    }
  }
  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, t, c, var, xhat, eps](Node &self) {
    const double inv_t = 1.0 / static_cast<double>(t);
    for (std::int64_t j = 0; j < c; ++j) {
      const double inv_std = 1.0 / std::sqrt(var[j] + eps);
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::int64_t i = 0; i < t; ++i) {
        const double g = self.grad.at(i, j);
        sum_g += g;
        sum_gx += g * xhat.at(i, j);
        if (gamma->requires_grad) gamma->grad[j] += g * xhat.at(i, j);
        if (beta->requires_grad) beta->grad[j] += g;
      }
      if (x->requires_grad) {
        const double a = gamma->value[j] * inv_std;
        for (std::int64_t i = 0; i < t; ++i) {
          const double g = self.grad.at(i, j);
          x->grad.at(i, j) +=
              a * (g - inv_t * sum_g - xhat.at(i, j) * inv_t * sum_gx);
        }
      }
    }
  });
}

// ---- Adam ----

void Adam::zero_grad(const std::vector<Var> &params) {
  for (const auto &p : params) p->grad.fill(0.0);
}

void Adam::step(const std::vector<Var> &params) {
  if (m_.empty()) {
    for (const auto &p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size())
    throw StateError("Adam: parameter list changed between steps");
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Node &p = *params[pi];
    if (!p.grad.all_finite()) {
      std::fprintf(stderr,
                   "warning: non-finite gradient for parameter '%s'; update skipped\n",
                   p.name.c_str());
      p.grad.fill(0.0);
      continue;
    }
    Tensor &m = m_[pi];
    Tensor &v = v_[pi];
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
    p.grad.fill(0.0);
  }
}

// ---- gradient checking ----

GradCheckReport grad_check(const std::function<Var()> &loss,
                           const std::vector<Var> &params, double epsilon,
                           double tolerance) {
  for (const auto &p : params) p->grad.fill(0.0);
  Var root = loss();
  if (root->value.numel() != 1)
    throw DataError("grad_check: loss must be scalar");
  backward(root);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto &p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Node &p = *params[pi];
    GradCheckEntry entry;
    entry.name = p.name.empty() ? "param" + std::to_string(pi) : p.name;
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + epsilon;
      const double f_plus = loss()->value[0];
      p.value[i] = orig - epsilon;
      const double f_minus = loss()->value[0];
      p.value[i] = orig;
      const double fd = (f_plus - f_minus) / (2.0 * epsilon);
      const double an = analytic[pi][i];
      const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(fd - an) / denom);
    }
    entry.passed = entry.max_rel_error < tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  for (const auto &p : params) p->grad.fill(0.0);
  return report;
}

}  // namespace zsu::grad
