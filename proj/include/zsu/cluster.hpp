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
#include <utility>
#include <vector>

#include "zsu/codes.hpp"
#include "zsu/dsp.hpp"
#include "zsu/tensor.hpp"

namespace zsu::cluster {

// Per-dimension zero-mean unit-variance transform fitted on training data and
// stored with every clustering model.
struct Standardizer {
  Tensor mean;  // [D]
  Tensor std;   // [D], floored away from zero

  static Standardizer fit(const Tensor &data);
  Tensor apply(const Tensor &data) const;
};

// Non-overlapping averaging of consecutive groups of r frames; the trailing
// partial group is averaged over its actual length.
dsp::FeatureSequence time_reduce(const dsp::FeatureSequence &features,
                                 std::int64_t factor);
Tensor time_reduce(const Tensor &frames, std::int64_t factor);

struct KMeansModel {
  Tensor centroids;                 // K x D (in standardized space)
  std::vector<std::int64_t> counts; // assignments seen during fitting
  Standardizer standardizer;

  std::int64_t k() const { return centroids.rows(); }
  std::int64_t dim() const { return centroids.cols(); }
};

struct KMeansFitOptions {
  std::int64_t batch_size = 1024;   // >= number of frames means full batch
  std::int64_t iterations = 10;     // passes over the data
  std::uint64_t seed = 0;
};

KMeansModel kmeans_fit(const Tensor &features, std::int64_t k,
                       const KMeansFitOptions &opts);

// One full-batch Lloyd iteration on standardized data; returns the inertia
// (sum of squared distances) of the assignment used for the update.
double kmeans_lloyd_iterate(KMeansModel &model, const Tensor &standardized);

double kmeans_inertia(const KMeansModel &model, const Tensor &standardized);

struct KMeansEncoding {
  CodeSequence codes;
  Tensor centroid_sequence;  // T x D continuous representation for ABX
};

KMeansEncoding kmeans_encode(const KMeansModel &model, const Tensor &features);

struct GmmModel {
  Tensor weights;    // [K], sums to 1
  Tensor means;      // K x D
  Tensor variances;  // K x D, >= floor
  Standardizer standardizer;

  std::int64_t k() const { return means.rows(); }
  std::int64_t dim() const { return means.cols(); }
};

struct GmmFitOptions {
  std::int64_t iterations = 25;
  std::uint64_t seed = 0;
  double variance_floor_scale = 1e-6;  // times the global per-dim variance
};

struct GmmFitResult {
  GmmModel model;
  std::vector<double> log_likelihood;  // mean per-frame LL after each iteration
};

GmmFitResult gmm_fit(const Tensor &features, std::int64_t k,
                     const GmmFitOptions &opts);

// Mean per-frame log-likelihood on standardized data.
double gmm_log_likelihood(const GmmModel &model, const Tensor &standardized);

// T x K posteriors in the log domain (rows log-sum-exp normalized).
Tensor gmm_log_posterior(const GmmModel &model, const Tensor &features);
// Exponentiated posteriors; rows sum to 1.
Tensor gmm_posterior(const GmmModel &model, const Tensor &features);

}  // namespace zsu::cluster
