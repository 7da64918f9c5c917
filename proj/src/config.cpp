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

#include "zsu/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "zsu/errors.hpp"

namespace zsu::config {

namespace {

std::string trim(const std::string &s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

ConfigMap ConfigMap::from_file(const std::string &path) {
  ConfigMap cfg;
  cfg.merge_file(path);
  return cfg;
}

void ConfigMap::merge_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError("config parse error at " + path + ":" +
                      std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    values_[section.empty() ? key : section + "." + key] = value;
  }
}

void ConfigMap::set(const std::string &key, const std::string &value) {
  values_[key] = value;
}

bool ConfigMap::has(const std::string &key) const { return values_.count(key) > 0; }

std::string ConfigMap::get(const std::string &key, const std::string &fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::int64_t ConfigMap::get_int(const std::string &key, std::int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stoll(it->second);
  } catch (const std::exception &) {
    throw DataError("config value for '" + key + "' is not an integer: " + it->second);
  }
}

double ConfigMap::get_double(const std::string &key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception &) {
    throw DataError("config value for '" + key + "' is not a number: " + it->second);
  }
}

void RunReport::set(const std::string &key, const std::string &value) {
  values_[key] = value;
}

void RunReport::set(const std::string &key, double value) {
  std::ostringstream os;
  os.precision(12);
  os << value;
  values_[key] = os.str();
}

void RunReport::set(const std::string &key, std::int64_t value) {
  values_[key] = std::to_string(value);
}

void RunReport::echo_config(const ConfigMap &cfg) {
  for (const auto &[k, v] : cfg.entries()) values_["config." + k] = v;
}

std::string RunReport::to_string() const {
  std::ostringstream os;
  for (const auto &[k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

void RunReport::save(const std::string &path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write report: " + path);
    out << to_string();
  }
  std::filesystem::rename(tmp, path);
}

const std::vector<PaperReferenceRow> &paper_reference_table() {
  static const std::vector<PaperReferenceRow> table = {
      {"baseline", "official", 35.63, 71.98},
      {"topline", "official", 29.85, 37.73},
      {"mel-spec", "direct", 30.291, 1738.38},
      {"mfcc", "direct", 21.114, 1737.47},
      {"kmeans", "C=64 1T", 23.56, 553}, {"kmeans", "C=64 2T", 25.97, 280},
      {"kmeans", "C=64 4T", 29.41, 136}, {"kmeans", "C=128 1T", 23.16, 649},
      {"kmeans", "C=128 2T", 24.24, 321}, {"kmeans", "C=128 4T", 28.12, 161},
      {"kmeans", "C=256 1T", 21.90, 744}, {"kmeans", "C=256 2T", 23.73, 369},
      {"kmeans", "C=256 4T", 27.17, 182},
      {"gmm", "C=64 1T", 20.81, 1647}, {"gmm", "C=64 2T", 22.67, 676},
      {"gmm", "C=64 4T", 29.82, 257}, {"gmm", "C=128 1T", 19.61, 1705},
      {"gmm", "C=128 2T", 23.06, 704}, {"gmm", "C=128 4T", 31.19, 281},
      {"gmm", "C=256 1T", 18.93, 1691}, {"gmm", "C=256 2T", 23.39, 757},
      {"gmm", "C=256 4T", 32.99, 306},
      {"vqvae", "C=64 1T", 27.46, 606}, {"vqvae", "C=64 2T", 25.51, 302},
      {"vqvae", "C=64 4T", 26.15, 138}, {"vqvae", "C=64 8T", 28.81, 70},
      {"vqvae", "C=128 1T", 27.65, 686}, {"vqvae", "C=128 2T", 24.29, 347},
      {"vqvae", "C=128 4T", 25.04, 165}, {"vqvae", "C=128 8T", 30.87, 79},
      {"vqvae", "C=256 1T", 27.63, 787}, {"vqvae", "C=256 2T", 24.37, 349},
      {"vqvae", "C=256 4T", 24.17, 184}, {"vqvae", "C=256 8T", 30.51, 79},
      {"vqvae", "C=512 1T", 27.69, 871}, {"vqvae", "C=512 2T", 23.59, 400},
      {"vqvae", "C=512 4T", 24.63, 180}, {"vqvae", "C=512 8T", 32.02, 74},
  };
  return table;
}

}  // namespace zsu::config
