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
#include <map>
#include <string>
#include <vector>

#include "zsu/codes.hpp"
#include "zsu/tensor.hpp"

namespace zsu::metrics {

enum class FrameDistance { Cosine, SymmetricKl };

FrameDistance frame_distance_from_name(const std::string &name);
std::string frame_distance_name(FrameDistance d);

// 1 - cosine similarity; if exactly one vector is zero the distance is 1.
double cosine_distance(const Tensor &a, std::int64_t row_a, const Tensor &b,
                       std::int64_t row_b);
// 0.5 (KL(p||q) + KL(q||p)) after flooring at 1e-10 and renormalizing.
double symmetric_kl(const Tensor &a, std::int64_t row_a, const Tensor &b,
                    std::int64_t row_b);

// Monotone alignment with steps {(1,0),(0,1),(1,1)}; minimal total frame
// cost, normalized by the alignment path length (ties on total cost prefer
// the shorter path).
double dtw(const Tensor &seq_a, const Tensor &seq_b, FrameDistance distance);

struct AbxTriple {
  std::string a_id;
  std::string b_id;
  std::string x_id;
  std::string category_a;  // shared by A and X
  std::string category_b;
};

struct AbxReport {
  double error_rate = 0.0;  // in [0, 1]
  std::int64_t triples_scored = 0;
  std::int64_t triples_skipped = 0;
  std::map<std::string, std::pair<double, std::int64_t>> per_category;  // (error sum, count)
};

// Per triple: 1 if dtw(a,x) > dtw(b,x), 0.5 on a tie, else 0; plain mean.
// Triples referencing a missing representation are skipped and counted.
AbxReport abx_score(const std::vector<AbxTriple> &triples,
                    const std::map<std::string, Tensor> &representations,
                    FrameDistance distance);

// Triple manifest: one per line "A_id B_id X_id category_a category_b".
std::vector<AbxTriple> load_triples(const std::string &path);

struct BitrateReport {
  double bits_per_second = 0.0;
  double entropy_bits = 0.0;  // unigram entropy H in bits per symbol
  std::int64_t symbol_count = 0;
  double duration_seconds = 0.0;
};

// B = (n / D) * H with H the empirical unigram entropy over the corpus.
BitrateReport bitrate(const std::vector<CodeSequence> &sequences,
                      double total_duration_seconds);

}  // namespace zsu::metrics
