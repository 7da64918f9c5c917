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

#include "zsu/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace zsu::metrics {

FrameDistance frame_distance_from_name(const std::string &name) {
  if (name == "cosine" || name == "cos") return FrameDistance::Cosine;
  if (name == "kl" || name == "symmetric_kl") return FrameDistance::SymmetricKl;
  throw ConfigError("unknown frame distance: " + name);
}

std::string frame_distance_name(FrameDistance d) {
  return d == FrameDistance::Cosine ? "cosine" : "symmetric_kl";
}

double cosine_distance(const Tensor &a, std::int64_t row_a, const Tensor &b,
                       std::int64_t row_b) {
  const std::int64_t d = a.cols();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    const double x = a.at(row_a, j), y = b.at(row_b, j);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  const bool za = na <= 0.0, zb = nb <= 0.0;
  if (za && zb) return 0.0;
  if (za || zb) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

constexpr double kProbFloor = 1e-10;

void floored_row(const Tensor &m, std::int64_t row, std::vector<double> &out) {
  const std::int64_t d = m.cols();
  out.resize(static_cast<std::size_t>(d));
  double sum = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    const double v = m.at(row, j);
    if (v < -1e-9 || !std::isfinite(v))
      throw DataError("symmetric_kl: rows must be probability vectors");
    out[static_cast<std::size_t>(j)] = std::max(v, kProbFloor);
    sum += out[static_cast<std::size_t>(j)];
  }
  if (std::abs(sum - 1.0) > 1e-3)
    throw DataError("symmetric_kl: row does not sum to 1");
  for (auto &v : out) v /= sum;
}

}  // namespace

double symmetric_kl(const Tensor &a, std::int64_t row_a, const Tensor &b,
                    std::int64_t row_b) {
  if (a.cols() != b.cols()) throw DataError("symmetric_kl: dimension mismatch");
  std::vector<double> p, q;
  floored_row(a, row_a, p);
  floored_row(b, row_b, q);
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j)
    s += 0.5 * (p[j] * std::log(p[j] / q[j]) + q[j] * std::log(q[j] / p[j]));
  return std::max(s, 0.0);
}

double dtw(const Tensor &seq_a, const Tensor &seq_b, FrameDistance distance) {
  const std::int64_t ta = seq_a.rows(), tb = seq_b.rows();
  if (ta < 1 || tb < 1) throw DataError("dtw: empty sequence");
  if (seq_a.cols() != seq_b.cols()) throw DataError("dtw: dimension mismatch");

  auto frame_cost = [&](std::int64_t i, std::int64_t j) {
    return distance == FrameDistance::Cosine ? cosine_distance(seq_a, i, seq_b, j)
                                             : symmetric_kl(seq_a, i, seq_b, j);
  };

  // Accumulated (total cost, path length) per cell; lexicographic minimum.
  // Both components are additive along a path, so Bellman recursion holds.
  struct Cell {
    double cost = std::numeric_limits<double>::infinity();
    std::int64_t len = 0;
  };
  std::vector<Cell> prev(static_cast<std::size_t>(tb)), cur(static_cast<std::size_t>(tb));
  auto better = [](const Cell &x, const Cell &y) {
    return x.cost != y.cost ? x.cost < y.cost : x.len < y.len;
  };
  for (std::int64_t i = 0; i < ta; ++i) {
    for (std::int64_t j = 0; j < tb; ++j) {
      const double c = frame_cost(i, j);
      Cell best;
      if (i == 0 && j == 0) {
        best = {0.0, 0};
      } else {
        if (i > 0 && j > 0 && better(prev[static_cast<std::size_t>(j - 1)], best))
          best = prev[static_cast<std::size_t>(j - 1)];
        if (i > 0 && better(prev[static_cast<std::size_t>(j)], best))
          best = prev[static_cast<std::size_t>(j)];
        if (j > 0 && better(cur[static_cast<std::size_t>(j - 1)], best))
          best = cur[static_cast<std::size_t>(j - 1)];
      }
      cur[static_cast<std::size_t>(j)] = {best.cost + c, best.len + 1};
    }
    std::swap(prev, cur);
  }
  const Cell &final_cell = prev[static_cast<std::size_t>(tb - 1)];
  return final_cell.cost / static_cast<double>(final_cell.len);
}

AbxReport abx_score(const std::vector<AbxTriple> &triples,
                    const std::map<std::string, Tensor> &representations,
                    FrameDistance distance) {
  AbxReport report;
  double error_sum = 0.0;
  for (const auto &triple : triples) {
    const auto a = representations.find(triple.a_id);
    const auto b = representations.find(triple.b_id);
    const auto x = representations.find(triple.x_id);
    if (a == representations.end() || b == representations.end() ||
        x == representations.end()) {
      ++report.triples_skipped;
      continue;
    }
    const double dax = dtw(a->second, x->second, distance);
    const double dbx = dtw(b->second, x->second, distance);
    const double err = dax > dbx ? 1.0 : (dax == dbx ? 0.5 : 0.0);
    error_sum += err;
    ++report.triples_scored;
    auto &cat = report.per_category[triple.category_a];
    cat.first += err;
    cat.second += 1;
  }
  if (report.triples_scored > 0)
    report.error_rate = error_sum / static_cast<double>(report.triples_scored);
  return report;
}

std::vector<AbxTriple> load_triples(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triple manifest: " + path);
  std::vector<AbxTriple> triples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    AbxTriple t;
    if (!(ss >> t.a_id >> t.b_id >> t.x_id >> t.category_a >> t.category_b))
      throw DataError("bad triple at line " + std::to_string(line_no) + " of " + path);
    triples.push_back(std::move(t));
  }
  return triples;
}

BitrateReport bitrate(const std::vector<CodeSequence> &sequences,
                      double total_duration_seconds) {
  if (total_duration_seconds <= 0.0)
    throw DataError("bitrate: duration must be positive");
  std::map<std::int64_t, std::int64_t> counts;
  std::int64_t n = 0;
  for (const auto &seq : sequences)
    for (auto s : seq.indices) {
      ++counts[s];
      ++n;
    }
  if (n == 0) throw DataError("bitrate: empty corpus");
  double entropy = 0.0;
  for (const auto &[sym, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(n);
    entropy -= p * std::log2(p);
  }
  BitrateReport report;
  report.entropy_bits = entropy;
  report.symbol_count = n;
  report.duration_seconds = total_duration_seconds;
  report.bits_per_second =
      static_cast<double>(n) / total_duration_seconds * entropy;
  return report;
}

}  // namespace zsu::metrics
