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

namespace zsu::config {

// Flat key-value configuration with [section] headers.  Keys are stored as
// "section.key"; command-line flags override file values and the resolved
// merge is what run reports echo.
class ConfigMap {
 public:
  ConfigMap() = default;

  static ConfigMap from_file(const std::string &path);
  void merge_file(const std::string &path);
  void set(const std::string &key, const std::string &value);
  bool has(const std::string &key) const;

  std::string get(const std::string &key, const std::string &fallback) const;
  std::int64_t get_int(const std::string &key, std::int64_t fallback) const;
  double get_double(const std::string &key, double fallback) const;

  const std::map<std::string, std::string> &entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Structured key-value run report; deterministic output (sorted keys, no
// timestamps) so identical runs produce byte-identical files.
class RunReport {
 public:
  void set(const std::string &key, const std::string &value);
  void set(const std::string &key, double value);
  void set(const std::string &key, std::int64_t value);
  void echo_config(const ConfigMap &cfg);  // stored under "config." keys
  void save(const std::string &path) const;
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

struct PaperReferenceRow {
  std::string model;
  std::string setting;  // e.g. "C=256 4T"
  double abx = 0.0;
  double bitrate = 0.0;
};

// Published reference numbers for side-by-side display; none of these are
// produced by this toolkit.
const std::vector<PaperReferenceRow> &paper_reference_table();

}  // namespace zsu::config
