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

// End-to-end exercises of the installed binary.  ZSU_CLI_PATH is injected by
// the build so the test can find the executable it was built with.

#include <cstdlib>
#include <fstream>
#include <string>

#include <doctest.h>

#include "support.hpp"
#include "zsu/config.hpp"
#include "zsu/corpus.hpp"

namespace {

int run(const std::string &args) {
  const std::string cmd = std::string(ZSU_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("cli exit codes") {
  CHECK(run("info") == 0);
  CHECK(run("info --paper-table") == 0);
  CHECK(run("--no-such-flag") == 2);
  CHECK(run("extract --manifest /nonexistent.tsv --out /tmp/zsu_cli_noout") == 3);
  CHECK(run("train-units") == 2);  // missing required flags
}

TEST_CASE("cli pipeline: extract, train kmeans units, encode, bitrate") {
  const auto dir = zsu::test::scratch_dir("cli_pipeline");
  const auto corpus = zsu::test::write_tone_corpus(dir / "corpus", 2, 0.6);

  const std::string feat = (dir / "feat").string();
  REQUIRE(run("extract --manifest " + corpus.manifest_path + " --out " + feat) == 0);
  for (const auto &id : corpus.ids)
    CHECK(std::filesystem::exists(dir / "feat" / "features" / (id + ".zsu")));

  const std::string units = (dir / "units").string();
  REQUIRE(run("train-units --manifest " + corpus.manifest_path + " --features " +
              feat + " --out " + units +
              " --model kmeans --codebook 8 --time-reduction 2 --seed 4"
              " --set training.iterations=4") == 0);
  CHECK(std::filesystem::exists(dir / "units" / "model.zsu"));

  const std::string enc = (dir / "enc").string();
  REQUIRE(run("encode --manifest " + corpus.manifest_path + " --features " + feat +
              " --model " + units + "/model.zsu --out " + enc) == 0);
  const auto lines = zsu::corpus::load_code_lines((dir / "enc" / "codes.txt").string());
  CHECK(lines.size() == corpus.ids.size());
  for (const auto &[id, codes] : lines) {
    CHECK(!codes.empty());
    for (auto c : codes) {
      CHECK(c >= 0);
      CHECK(c < 8);
    }
  }

  const std::string rate = (dir / "rate").string();
  REQUIRE(run("eval-bitrate --codes " + enc + "/codes.txt --durations " + enc +
              "/durations.txt --out " + rate) == 0);
  zsu::config::ConfigMap report;
  report.merge_file((dir / "rate" / "report.txt").string());
  CHECK(report.get_double("bits_per_second", -1.0) > 0.0);
  CHECK(report.get_double("entropy_bits_per_symbol", -1.0) <= 3.0 + 1e-9);

  // The run report echoes the resolved configuration.
  zsu::config::ConfigMap units_report;
  units_report.merge_file((dir / "units" / "report.txt").string());
  CHECK(units_report.get("config.model.codebook", "") == "8");
  CHECK(units_report.get_int("config.training.iterations", 0) == 4);
}

TEST_CASE("cli gradcheck subcommand passes") {
  CHECK(run("gradcheck --seed 5") == 0);
}
