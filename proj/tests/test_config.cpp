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

#include <fstream>

#include <doctest.h>

#include "support.hpp"
#include "zsu/config.hpp"
#include "zsu/errors.hpp"

using namespace zsu;
using namespace zsu::config;

TEST_CASE("config file parsing with sections and comments") {
  const auto dir = test::scratch_dir("config");
  const std::string path = (dir / "run.cfg").string();
  {
    std::ofstream out(path);
    out << "# comment\n";
    out << "top = 1\n";
    out << "[model]\n";
    out << "codebook = 256\n";
    out << "gamma = 0.25\n";
    out << "; another comment\n";
    out << "[training]\n";
    out << "steps = 500\n";
  }
  const auto cfg = ConfigMap::from_file(path);
  CHECK(cfg.get_int("top", 0) == 1);
  CHECK(cfg.get_int("model.codebook", 0) == 256);
  CHECK(cfg.get_double("model.gamma", 0.0) == doctest::Approx(0.25));
  CHECK(cfg.get_int("training.steps", 0) == 500);
  CHECK(cfg.get("missing.key", "fallback") == "fallback");
}

TEST_CASE("flag overrides win over file values") {
  const auto dir = test::scratch_dir("config_override");
  const std::string path = (dir / "run.cfg").string();
  {
    std::ofstream out(path);
    out << "[model]\ncodebook = 64\n";
  }
  ConfigMap cfg = ConfigMap::from_file(path);
  cfg.set("model.codebook", "512");
  CHECK(cfg.get_int("model.codebook", 0) == 512);
}

TEST_CASE("typed getters reject malformed values") {
  ConfigMap cfg;
  cfg.set("model.codebook", "many");
  CHECK_THROWS_AS(cfg.get_int("model.codebook", 0), DataError);
  cfg.set("model.gamma", "strong");
  CHECK_THROWS_AS(cfg.get_double("model.gamma", 0.0), DataError);
}

TEST_CASE("config parse errors carry file and line") {
  const auto dir = test::scratch_dir("config_bad");
  const std::string path = (dir / "bad.cfg").string();
  {
    std::ofstream out(path);
    out << "[model]\nthis line has no equals sign\n";
  }
  try {
    ConfigMap::from_file(path);
    FAIL("expected DataError");
  } catch (const DataError &e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2") != std::string::npos);
  }
}

TEST_CASE("run reports are deterministic and echo the config") {
  ConfigMap cfg;
  cfg.set("model.codebook", "64");
  RunReport a, b;
  a.set("zeta", 1.5);
  a.set("alpha", std::int64_t(2));
  a.echo_config(cfg);
  b.echo_config(cfg);
  b.set("alpha", std::int64_t(2));
  b.set("zeta", 1.5);
  CHECK(a.to_string() == b.to_string());  // insertion order is irrelevant
  CHECK(a.to_string().find("config.model.codebook = 64") != std::string::npos);
  // Keys come out sorted.
  const std::string s = a.to_string();
  CHECK(s.find("alpha") < s.find("config.model.codebook"));
  CHECK(s.find("config.model.codebook") < s.find("zeta"));
}

TEST_CASE("reference table contains the published operating points") {
  const auto &table = paper_reference_table();
  CHECK(table.size() > 30);
  bool found = false;
  for (const auto &row : table)
    if (row.model == "vqvae" && row.setting == "C=256 4T") {
      CHECK(row.abx == doctest::Approx(24.17));
      CHECK(row.bitrate == doctest::Approx(184.0));
      found = true;
    }
  CHECK(found);
}
