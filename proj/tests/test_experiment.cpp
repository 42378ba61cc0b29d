// Copyright 2026 The ICE Localizer Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <sys/wait.h>

#include <cstdlib>

#include "torch_doctest.hpp"
#include "ice/experiment.hpp"
#include "test_util.hpp"

using namespace ice;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_config_json(const fs::path& out) {
  json j = json::parse(R"({
    "corpus": {"synthetic": {"patients": 6, "seed": 5, "rows": 48, "cols": 64,
                             "min_beats": 6, "max_beats": 7}},
    "preprocess": {"crop_rows": 40, "crop_cols": 56, "resize_factor": [1, 1]},
    "augment": {"variants": 1, "seed": 2},
    "folds": {"n_folds": 3, "window": 1, "run": [0]},
    "model": {"backbone": "reduced", "width_divisor": 8},
    "train": {"lr": 0.001, "max_epochs": 2, "seed": 1},
    "views": ["MV"],
    "gradcam": {"clips": 1}
  })");
  j["output_dir"] = out.string();
  return j;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ICE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("config parsing") {
    const json base = {{"corpus", {{"manifest", "data/m.json"}}}};
    const auto cfg = experiment_config_from_json(base, "/srv/exp");
    CHECK(cfg.manifest == fs::path("/srv/exp/data/m.json"));
    CHECK(cfg.n_folds == 10);
    CHECK(cfg.window == 4);
    CHECK(cfg.views.size() == 4);
    CHECK(cfg.selected_folds().size() == 10);

    // Every field survives a round trip through the echoed document.
    auto echoed = to_json(cfg);
    const auto again = experiment_config_from_json(echoed);
    CHECK(to_json(again) == echoed);

    auto bad = [&](json patch) {
      json j = base;
      j.merge_patch(patch);
      return j;
    };
    CHECK_THROWS_AS(experiment_config_from_json(bad({{"bogus", 1}})), ConfigError);
    CHECK_THROWS_AS(experiment_config_from_json(bad({{"train", {{"learning_rate", 1}}}})), ConfigError);
    CHECK_THROWS_AS(experiment_config_from_json(bad({{"model", {{"depth", 50}}}})), ConfigError);
    CHECK_THROWS_AS(experiment_config_from_json(bad({{"views", {"XX"}}})), ConfigError);
    CHECK_THROWS_AS(experiment_config_from_json(bad({{"tie_break", "coin"}})), ConfigError);
    CHECK_THROWS_AS(experiment_config_from_json(bad({{"train", {{"lr", "fast"}}}})), ConfigError);
    CHECK_THROWS_AS(experiment_config_from_json(json{{"corpus", json::object()}}), ConfigError);

    auto c = cfg;
    c.folds = {12};
    CHECK_THROWS_AS(c.validate(false), ConfigError);
    c = cfg;
    c.gradcam_layer = "";
    CHECK_THROWS_AS(c.validate(false), ConfigError);
    c.gradcam_layer = "fc";
    CHECK_THROWS_AS(c.validate(false), ConfigError);
    c.gradcam_layer = "layer3.0.downsample";
    CHECK_NOTHROW(c.validate(false));
    c = cfg;
    CHECK_THROWS_AS(c.validate(true), ConfigError);  // manifest does not exist
  }

  TEST_CASE("report from prediction files") {
    ice::testing::TempDir empty("empty_exp");
    CHECK_THROWS(report(empty.path()));
    CHECK_THROWS(report(empty / "absent"));

    const auto tables = report(ice::testing::fixture("reference_test_run"));
    REQUIRE(tables.test.size() == 10);
    const auto want = ice::testing::read_csv(ice::testing::fixture("reference_test_table.csv"));
    std::stringstream ss(tables.test_csv);
    std::vector<std::vector<std::string>> got;
    for (std::string line; std::getline(ss, line);) {
      std::vector<std::string> cells;
      std::stringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
      got.push_back(cells);
    }
    REQUIRE(got.size() == 12);  // header, ten folds, mean
    CHECK(got[0] == want[0]);
    for (std::size_t r = 1; r <= 10; ++r) {
      for (std::size_t c = 1; c < 6; ++c) {
        // Published cells were sometimes truncated rather than rounded.
        REQUIRE(std::abs(std::stod(got[r][c]) - std::stod(want[r][c])) <= 0.0100001);
      }
    }
    CHECK(got[11][0] == "Mean");
    CHECK(got[11][5] == "66.20");
    // No validation predictions in this tree.
    for (const auto& r : tables.val) CHECK_FALSE(r.cross_view_accuracy.has_value());
  }

  TEST_CASE("restricted run and resume") {
    ice::testing::TempDir dir("exp_run");
    const auto cfg = experiment_config_from_json(tiny_config_json(dir / "out"));
    CHECK(cfg.synthetic->dir == dir / "out" / "corpus");
    const auto first = run_experiment(cfg);
    REQUIRE(first.cells.size() == 1);
    CHECK(first.cells[0].status == "complete");
    CHECK(first.cells[0].trained);
    CHECK(first.summary["complete"] == true);
    CHECK(first.summary["leakage_clean"] == true);

    const fs::path cell = cell_dir(cfg.output_dir, 0, ViewLabel::MV);
    for (const char* f : {"checkpoint.bin", "epochs.csv", "preds.jsonl", "cell.json"}) CHECK(fs::exists(cell / f));
    CHECK_FALSE(fs::exists(cfg.output_dir / "fold_1"));
    std::size_t gifs = 0;
    for (const auto& e : fs::directory_iterator(cell / "gradcam")) gifs += e.path().extension() == ".gif";
    CHECK(gifs == 1);

    const auto info = json::parse(ice::testing::slurp(cell / "cell.json"));
    CHECK(info["leakage"]["clean"] == true);
    CHECK(info["train_patients"].size() == 4);
    for (const auto& p : read_predictions(cell / "preds.jsonl")) CHECK(p.view == ViewLabel::MV);

    const std::string summary = ice::testing::slurp(cfg.output_dir / "summary" / "summary.json");
    const auto second = run_experiment(cfg);
    REQUIRE(second.cells.size() == 1);
    CHECK_FALSE(second.cells[0].trained);
    CHECK(ice::testing::slurp(cfg.output_dir / "summary" / "summary.json") == summary);

    // A changed training seed invalidates the cell.
    auto reseeded = cfg;
    reseeded.train.seed = 99;
    reseeded.gradcam_clips = 0;
    const auto third = run_experiment(reseeded);
    CHECK(third.cells[0].trained);
  }

  TEST_CASE("command line exit codes") {
    ice::testing::TempDir dir("cli");
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("") == 1);
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("run") == 1);  // --config is required
    CHECK(run_cli("run --config " + (dir / "missing.json").string()) == 1);

    ice::testing::spit(dir / "bad.json", R"({"corpus": {"manifest": "m.json"}, "extra": 1})");
    CHECK(run_cli("split --config " + (dir / "bad.json").string()) == 1);
    ice::testing::spit(dir / "broken.json", "{not json");
    CHECK(run_cli("split --config " + (dir / "broken.json").string()) == 1);

    CHECK(run_cli("report --out " + (dir / "nothing").string()) == 2);
    CHECK(run_cli("report --out " + ice::testing::fixture("reference_test_run").string()) == 0);

    CHECK(run_cli("synth --small --patients 1 --seed 3 --out " + (dir / "corpus").string()) == 0);
    CHECK(run_cli("validate --manifest " + (dir / "corpus" / "manifest.json").string()) == 0);
    fs::remove(dir / "corpus" / "frames" / "P01_TV_NSR" / "frame_00002.png");
    CHECK(run_cli("validate --manifest " + (dir / "corpus" / "manifest.json").string()) == 1);

    json j = tiny_config_json(dir / "ignored");
    ice::testing::spit(dir / "tiny.json", j.dump());
    CHECK(run_cli("split --config " + (dir / "tiny.json").string() + " --out " + (dir / "o").string()) == 0);
    CHECK(fs::exists(dir / "o" / "corpus" / "manifest.json"));
    CHECK(run_cli("train --config " + (dir / "tiny.json").string() + " --view XX") == 1);
  }
}
