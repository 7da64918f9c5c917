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

#include "zsu/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

namespace zsu::cluster {

namespace {

double sq_dist_row(const Tensor &a, std::int64_t ra, const Tensor &b,
                   std::int64_t rb) {
  const std::int64_t d = a.cols();
  double s = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    const double diff = a.at(ra, j) - b.at(rb, j);
    s += diff * diff;
  }
  return s;
}

std::int64_t nearest_centroid(const Tensor &centroids, const Tensor &data,
                              std::int64_t row, double *dist_out = nullptr) {
  std::int64_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::int64_t k = 0; k < centroids.rows(); ++k) {
    const double d = sq_dist_row(data, row, centroids, k);
    if (d < best_d) {  // strict: ties break to lowest index
      best_d = d;
      best = k;
    }
  }
  if (dist_out) *dist_out = best_d;
  return best;
}

Tensor kmeanspp_init(const Tensor &data, std::int64_t k, std::mt19937_64 &rng) {
  const std::int64_t n = data.rows();
  const std::int64_t d = data.cols();
  Tensor centroids({k, d});
  std::uniform_int_distribution<std::int64_t> first(0, n - 1);
  std::vector<double> min_dist(static_cast<std::size_t>(n),
                               std::numeric_limits<double>::infinity());
  std::int64_t chosen = first(rng);
  for (std::int64_t c = 0; c < k; ++c) {
    for (std::int64_t j = 0; j < d; ++j)
      centroids.at(c, j) = data.at(chosen, j);
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double dd = sq_dist_row(data, i, centroids, c);
      min_dist[static_cast<std::size_t>(i)] =
          std::min(min_dist[static_cast<std::size_t>(i)], dd);
      total += min_dist[static_cast<std::size_t>(i)];
    }
    if (total <= 0.0) {
      chosen = first(rng);  // all points coincide with some centroid
      continue;
    }
    std::uniform_real_distribution<double> uni(0.0, total);
    double target = uni(rng);
    chosen = n - 1;
    for (std::int64_t i = 0; i < n; ++i) {
      target -= min_dist[static_cast<std::size_t>(i)];
      if (target <= 0.0) {
        chosen = i;
        break;
      }
    }
  }
  return centroids;
}

void reseed_empty_clusters(KMeansModel &model, const Tensor &data,
                           const std::vector<std::int64_t> &counts,
                           std::mt19937_64 & /*rng*/) {
  const std::int64_t k = model.k();
  std::vector<std::pair<double, std::int64_t>> by_distance;
  bool any_empty = false;
  for (std::int64_t c = 0; c < k; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0) any_empty = true;
  if (!any_empty) return;
  for (std::int64_t i = 0; i < data.rows(); ++i) {
    double d = 0.0;
    nearest_centroid(model.centroids, data, i, &d);
    by_distance.emplace_back(d, i);
  }
  std::sort(by_distance.begin(), by_distance.end(),
            [](const auto &a, const auto &b) {
              return a.first != b.first ? a.first > b.first : a.second < b.second;
            });
  std::size_t next = 0;
  for (std::int64_t c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] != 0) continue;
    if (next >= by_distance.size()) break;
    const std::int64_t row = by_distance[next++].second;
    for (std::int64_t j = 0; j < data.cols(); ++j)
      model.centroids.at(c, j) = data.at(row, j);
  }
}

}  // namespace

Standardizer Standardizer::fit(const Tensor &data) {
  if (data.rows() < 1) throw DataError("Standardizer: empty data");
  const std::int64_t n = data.rows(), d = data.cols();
  Standardizer s;
  s.mean = Tensor({d});
  s.std = Tensor({d});
  for (std::int64_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::int64_t i = 0; i < n; ++i) m += data.at(i, j);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double diff = data.at(i, j) - m;
      v += diff * diff;
    }
    v /= static_cast<double>(n);
    s.mean[j] = m;
    s.std[j] = v > 1e-24 ? std::sqrt(v) : 1.0;
  }
  return s;
}

Tensor Standardizer::apply(const Tensor &data) const {
  if (data.cols() != mean.numel())
    throw DataError("Standardizer: dimension mismatch");
  Tensor out({data.rows(), data.cols()});
  for (std::int64_t i = 0; i < data.rows(); ++i)
    for (std::int64_t j = 0; j < data.cols(); ++j)
      out.at(i, j) = (data.at(i, j) - mean[j]) / std[j];
  return out;
}

Tensor time_reduce(const Tensor &frames, std::int64_t factor) {
  if (factor < 1) throw ConfigError("time_reduce: factor must be >= 1");
  if (factor == 1) return frames;
  const std::int64_t t = frames.rows(), d = frames.cols();
  const std::int64_t t_out = (t + factor - 1) / factor;
  Tensor out({t_out, d});
  for (std::int64_t g = 0; g < t_out; ++g) {
    const std::int64_t begin = g * factor;
    const std::int64_t end = std::min(begin + factor, t);
    const double inv = 1.0 / static_cast<double>(end - begin);
    for (std::int64_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::int64_t i = begin; i < end; ++i) s += frames.at(i, j);
      out.at(g, j) = s * inv;
    }
  }
  return out;
}

dsp::FeatureSequence time_reduce(const dsp::FeatureSequence &features,
                                 std::int64_t factor) {
  dsp::FeatureSequence out;
  out.frames = time_reduce(features.frames, factor);
  out.kind = features.kind;
  out.frame_rate = features.frame_rate / static_cast<double>(factor);
  return out;
}

KMeansModel kmeans_fit(const Tensor &features, std::int64_t k,
                       const KMeansFitOptions &opts) {
  const std::int64_t n = features.rows();
  if (n < k) throw DataError("kmeans_fit: fewer frames than clusters");
  if (k < 1) throw ConfigError("kmeans_fit: k must be >= 1");

  KMeansModel model;
  model.standardizer = Standardizer::fit(features);
  const Tensor data = model.standardizer.apply(features);
  std::mt19937_64 rng(opts.seed);
  model.centroids = kmeanspp_init(data, k, rng);
  model.counts.assign(static_cast<std::size_t>(k), 0);

  const bool full_batch = opts.batch_size >= n;
  if (full_batch) {
    for (std::int64_t it = 0; it < opts.iterations; ++it) {
      kmeans_lloyd_iterate(model, data);
      reseed_empty_clusters(model, data, model.counts, rng);
    }
  } else {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::vector<std::int64_t> lr_counts(static_cast<std::size_t>(k), 0);
    for (std::int64_t pass = 0; pass < opts.iterations; ++pass) {
      std::shuffle(order.begin(), order.end(), rng);
      std::fill(model.counts.begin(), model.counts.end(), 0);
      for (std::int64_t start = 0; start < n; start += opts.batch_size) {
        const std::int64_t end = std::min(start + opts.batch_size, n);
        // Assign the batch against the current centroids, then move each
        // centroid with a per-center decaying learning rate.
        std::vector<std::int64_t> assign(static_cast<std::size_t>(end - start));
        for (std::int64_t i = start; i < end; ++i)
          assign[static_cast<std::size_t>(i - start)] =
              nearest_centroid(model.centroids, data, order[static_cast<std::size_t>(i)]);
        for (std::int64_t i = start; i < end; ++i) {
          const std::int64_t row = order[static_cast<std::size_t>(i)];
          const std::int64_t c = assign[static_cast<std::size_t>(i - start)];
          ++lr_counts[static_cast<std::size_t>(c)];
          ++model.counts[static_cast<std::size_t>(c)];
          const double eta = 1.0 / static_cast<double>(lr_counts[static_cast<std::size_t>(c)]);
          for (std::int64_t j = 0; j < data.cols(); ++j)
            model.centroids.at(c, j) += eta * (data.at(row, j) - model.centroids.at(c, j));
        }
      }
      reseed_empty_clusters(model, data, model.counts, rng);
    }
    // Final hard assignment for the reported counts.
    std::fill(model.counts.begin(), model.counts.end(), 0);
    for (std::int64_t i = 0; i < n; ++i)
      ++model.counts[static_cast<std::size_t>(nearest_centroid(model.centroids, data, i))];
  }
  return model;
}

double kmeans_lloyd_iterate(KMeansModel &model, const Tensor &standardized) {
  const std::int64_t n = standardized.rows();
  const std::int64_t d = standardized.cols();
  const std::int64_t k = model.k();
  Tensor sums({k, d});
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
  double inertia = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double dist = 0.0;
    const std::int64_t c = nearest_centroid(model.centroids, standardized, i, &dist);
    inertia += dist;
    ++counts[static_cast<std::size_t>(c)];
    for (std::int64_t j = 0; j < d; ++j) sums.at(c, j) += standardized.at(i, j);
  }
  for (std::int64_t c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    for (std::int64_t j = 0; j < d; ++j)
      model.centroids.at(c, j) = sums.at(c, j) * inv;
  }
  model.counts = counts;
  return inertia;
}

double kmeans_inertia(const KMeansModel &model, const Tensor &standardized) {
  double inertia = 0.0;
  for (std::int64_t i = 0; i < standardized.rows(); ++i) {
    double d = 0.0;
    nearest_centroid(model.centroids, standardized, i, &d);
    inertia += d;
  }
  return inertia;
}

KMeansEncoding kmeans_encode(const KMeansModel &model, const Tensor &features) {
  if (features.cols() != model.dim())
    throw DataError("kmeans_encode: feature dimension mismatch");
  const Tensor data = model.standardizer.apply(features);
  const std::int64_t t = data.rows();
  KMeansEncoding enc;
  enc.codes.codebook_size = model.k();
  enc.codes.indices.resize(static_cast<std::size_t>(t));
  enc.centroid_sequence = Tensor({t, model.dim()});
  for (std::int64_t i = 0; i < t; ++i) {
    const std::int64_t c = nearest_centroid(model.centroids, data, i);
    enc.codes.indices[static_cast<std::size_t>(i)] = c;
    for (std::int64_t j = 0; j < model.dim(); ++j)
      enc.centroid_sequence.at(i, j) = model.centroids.at(c, j);
  }
  return enc;
}

// ---- GMM ----

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double log_gaussian_diag(const Tensor &x, std::int64_t row, const GmmModel &m,
                         std::int64_t comp) {
  const std::int64_t d = x.cols();
  double s = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    const double var = m.variances.at(comp, j);
    const double diff = x.at(row, j) - m.means.at(comp, j);
    s += -0.5 * (kLog2Pi + std::log(var) + diff * diff / var);
  }
  return s;
}

double logsumexp(const std::vector<double> &v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

GmmFitResult gmm_fit(const Tensor &features, std::int64_t k,
                     const GmmFitOptions &opts) {
  const std::int64_t n = features.rows();
  const std::int64_t d = features.cols();
  if (n < k) throw DataError("gmm_fit: fewer frames than components");
  if (opts.iterations < 1) throw ConfigError("gmm_fit: iterations must be >= 1");

  GmmFitResult result;
  GmmModel &m = result.model;
  KMeansFitOptions km_opts;
  km_opts.batch_size = n;  // full batch
  km_opts.iterations = 5;
  km_opts.seed = opts.seed;
  const KMeansModel km = kmeans_fit(features, k, km_opts);
  m.standardizer = km.standardizer;
  const Tensor data = m.standardizer.apply(features);

  // Per-dimension global variance of the standardized data sets the floor.
  Tensor global_var({d});
  for (std::int64_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += data.at(i, j);
    mean /= static_cast<double>(n);
    double v = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double diff = data.at(i, j) - mean;
      v += diff * diff;
    }
    global_var[j] = std::max(v / static_cast<double>(n), 1e-12);
  }
  Tensor floor({d});
  for (std::int64_t j = 0; j < d; ++j)
    floor[j] = opts.variance_floor_scale * global_var[j];

  // Initialize from the K-Means partition.
  m.weights = Tensor({k});
  m.means = km.centroids;
  m.variances = Tensor({k, d});
  {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
    std::vector<std::int64_t> assign(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t c = nearest_centroid(km.centroids, data, i);
      assign[static_cast<std::size_t>(i)] = c;
      ++counts[static_cast<std::size_t>(c)];
    }
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t c = assign[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < d; ++j) {
        const double diff = data.at(i, j) - m.means.at(c, j);
        m.variances.at(c, j) += diff * diff;
      }
    }
    for (std::int64_t c = 0; c < k; ++c) {
      const std::int64_t cnt = counts[static_cast<std::size_t>(c)];
      m.weights[c] = std::max(static_cast<double>(cnt), 1.0) / static_cast<double>(n);
      for (std::int64_t j = 0; j < d; ++j) {
        const double v = cnt > 0 ? m.variances.at(c, j) / static_cast<double>(cnt) : 1.0;
        m.variances.at(c, j) = std::max(v, floor[j]);
      }
    }
    double wsum = 0.0;
    for (std::int64_t c = 0; c < k; ++c) wsum += m.weights[c];
    for (std::int64_t c = 0; c < k; ++c) m.weights[c] /= wsum;
  }

  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
  Tensor log_resp({n, k});
  for (std::int64_t it = 0; it < opts.iterations; ++it) {
    // E-step in the log domain.
    std::vector<double> row(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t c = 0; c < k; ++c)
        row[static_cast<std::size_t>(c)] =
            std::log(m.weights[c]) + log_gaussian_diag(data, i, m, c);
      const double lse = logsumexp(row);
      for (std::int64_t c = 0; c < k; ++c)
        log_resp.at(i, c) = row[static_cast<std::size_t>(c)] - lse;
    }
    // M-step.
    for (std::int64_t c = 0; c < k; ++c) {
      double nk = 0.0;
      for (std::int64_t i = 0; i < n; ++i) nk += std::exp(log_resp.at(i, c));
      if (nk / static_cast<double>(n) < 1e-8) {
        // Degenerate component: reseed on a random data point.
        const std::int64_t row_idx = pick(rng);
        std::fprintf(stderr,
                     "gmm_fit: component %lld degenerate at iteration %lld; reseeded\n",
                     static_cast<long long>(c), static_cast<long long>(it));
        for (std::int64_t j = 0; j < d; ++j) {
          m.means.at(c, j) = data.at(row_idx, j);
          m.variances.at(c, j) = global_var[j];
        }
        m.weights[c] = 1.0 / static_cast<double>(n);
        continue;
      }
      m.weights[c] = nk / static_cast<double>(n);
      for (std::int64_t j = 0; j < d; ++j) {
        double mu = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
          mu += std::exp(log_resp.at(i, c)) * data.at(i, j);
        mu /= nk;
        double var = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          const double diff = data.at(i, j) - mu;
          var += std::exp(log_resp.at(i, c)) * diff * diff;
        }
        var /= nk;
        m.means.at(c, j) = mu;
        m.variances.at(c, j) = std::max(var, floor[j]);
      }
    }
    double wsum = 0.0;
    for (std::int64_t c = 0; c < k; ++c) wsum += m.weights[c];
    for (std::int64_t c = 0; c < k; ++c) m.weights[c] /= wsum;
    result.log_likelihood.push_back(gmm_log_likelihood(m, data));
  }
  return result;
}

double gmm_log_likelihood(const GmmModel &model, const Tensor &standardized) {
  const std::int64_t n = standardized.rows();
  const std::int64_t k = model.k();
  std::vector<double> row(static_cast<std::size_t>(k));
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t c = 0; c < k; ++c)
      row[static_cast<std::size_t>(c)] =
          std::log(model.weights[c]) + log_gaussian_diag(standardized, i, model, c);
    total += logsumexp(row);
  }
  return total / static_cast<double>(n);
}

Tensor gmm_log_posterior(const GmmModel &model, const Tensor &features) {
  if (features.cols() != model.dim())
    throw DataError("gmm_posterior: feature dimension mismatch");
  const Tensor data = model.standardizer.apply(features);
  const std::int64_t n = data.rows();
  const std::int64_t k = model.k();
  Tensor out({n, k});
  std::vector<double> row(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t c = 0; c < k; ++c)
      row[static_cast<std::size_t>(c)] =
          std::log(model.weights[c]) + log_gaussian_diag(data, i, model, c);
    const double lse = logsumexp(row);
    for (std::int64_t c = 0; c < k; ++c)
      out.at(i, c) = row[static_cast<std::size_t>(c)] - lse;
  }
  return out;
}

Tensor gmm_posterior(const GmmModel &model, const Tensor &features) {
  Tensor out = gmm_log_posterior(model, features);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return out;
}

}  // namespace zsu::cluster
