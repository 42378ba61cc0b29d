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

// Command-line entry point: synth, validate, split, train, eval, gradcam, report, run.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ice/corpus.hpp"
#include "ice/experiment.hpp"
#include "ice/folds.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonFlags {
  std::string config;
  std::optional<int> fold;
  std::string view;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool need_config = true) {
  auto* opt = cmd->add_option("--config", f.config, "experiment config (JSON)");
  if (need_config) opt->required();
  cmd->add_option("--fold", f.fold, "restrict to one fold (0-based)");
  cmd->add_option("--view", f.view, "restrict to one view (TV, MV, LPV, CT)");
  cmd->add_option("--seed", f.seed, "override the training and augmentation seeds");
  cmd->add_option("--out", f.out, "override the output directory");
}

ice::ExperimentConfig load_config(const CommonFlags& f) {
  ice::ExperimentConfig cfg = ice::load_experiment_config(f.config);
  if (!f.out.empty()) {
    const fs::path old_out = cfg.output_dir;
    cfg.output_dir = f.out;
    if (cfg.synthetic && cfg.synthetic->dir == old_out / "corpus") {
      cfg.synthetic->dir = cfg.output_dir / "corpus";
      cfg.manifest = cfg.synthetic->dir / "manifest.json";
    }
  }
  if (f.seed) {
    cfg.train.seed = *f.seed;
    cfg.augment.seed = *f.seed;
  }
  if (f.fold) cfg.folds = {*f.fold};
  if (!f.view.empty()) {
    const auto v = ice::parse_view(f.view);
    if (!v) throw ice::ConfigError("--view: unknown view '" + f.view + "'");
    cfg.views = {*v};
  }
  cfg.validate(/*check_paths=*/!cfg.synthetic.has_value());
  return cfg;
}

void print_tables(const ice::ReportTables& t) {
  std::cout << "Validation accuracy (%)\n" << t.val_csv << "\nTest accuracy (%)\n" << t.test_csv;
}

/// Shared setup for commands that work on existing cells.
struct Loaded {
  ice::ExperimentConfig cfg;
  ice::DatasetManifest manifest;
  std::vector<ice::Sample> samples;
};

Loaded load_all(const CommonFlags& f) {
  Loaded l;
  l.cfg = load_config(f);
  ice::configure_determinism(l.cfg.train.deterministic);
  l.manifest = ice::prepare_corpus(l.cfg);
  l.samples = ice::load_samples(l.manifest, l.cfg.preprocess, l.cfg.views);
  return l;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pacing-site classification from intracardiac echo heartbeat videos"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  int synth_patients = 12;
  bool synth_small = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--patients", synth_patients, "number of patients")->check(CLI::PositiveNumber);
  synth->add_flag("--small", synth_small, "quarter-size 177x254 frames");

  // validate
  auto* validate = app.add_subcommand("validate", "check a manifest and its frame stores");
  CommonFlags vflags;
  std::string vmanifest;
  validate->add_option("--manifest", vmanifest, "manifest path");
  add_common(validate, vflags, false);

  CommonFlags split_f, train_f, eval_f, cam_f, run_f;
  auto* split = app.add_subcommand("split", "print the patient folds");
  add_common(split, split_f);
  auto* train = app.add_subcommand("train", "train (fold, view) cells");
  add_common(train, train_f);
  auto* eval = app.add_subcommand("eval", "recompute predictions from checkpoints");
  add_common(eval, eval_f);
  auto* cam = app.add_subcommand("gradcam", "export Grad-CAM animations for test clips");
  add_common(cam, cam_f);
  int cam_clips = 4;
  cam->add_option("--clips", cam_clips, "clips per cell")->check(CLI::PositiveNumber);
  auto* rep = app.add_subcommand("report", "render validation and test tables");
  CommonFlags rep_f;
  add_common(rep, rep_f, false);
  auto* run = app.add_subcommand("run", "full pipeline");
  add_common(run, run_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) {
      ice::SynthConfig sc = synth_small ? ice::SynthConfig::small() : ice::SynthConfig{};
      const auto m = ice::generate_synthetic(synth_patients, synth_seed, sc, synth_out);
      std::cout << "wrote " << m.patients.size() << " patients to " << synth_out << "\n";
    } else if (*validate) {
      fs::path path = vmanifest;
      if (path.empty()) {
        if (vflags.config.empty()) throw ice::ConfigError("validate: --manifest or --config is required");
        path = load_config(vflags).manifest;
      }
      ice::DatasetManifest m;
      try {
        m = ice::parse_manifest(path);
      } catch (const std::exception& e) {
        throw ice::ConfigError(e.what());
      }
      const auto problems = ice::validate_manifest(m);
      for (const auto& p : problems) std::cout << p << "\n";
      if (!problems.empty()) return kExitConfig;
      std::cout << "ok: " << m.patients.size() << " patients\n";
    } else if (*split) {
      const auto cfg = load_config(split_f);
      const auto m = ice::prepare_corpus(cfg);
      std::cout << ice::folds_to_json(ice::make_folds(m.ordering, cfg.n_folds, cfg.window)) << "\n";
    } else if (*train || *run) {
      auto cfg = load_config(*train ? train_f : run_f);
      const auto result = ice::run_experiment(cfg);
      int failed = 0;
      for (const auto& c : result.cells) failed += c.status == "complete" ? 0 : 1;
      if (*run) {
        print_tables(ice::report(cfg.output_dir, cfg.tie_break));
      }
      if (failed > 0) {
        std::cerr << failed << " cell(s) failed; see cell.json files\n";
        return kExitRuntime;
      }
    } else if (*eval || *cam) {
      const Loaded l = load_all(*eval ? eval_f : cam_f);
      for (int fold : l.cfg.selected_folds()) {
        for (auto view : l.cfg.views) {
          if (*eval) {
            ice::evaluate_cell(l.cfg, l.manifest, l.samples, fold, view);
          } else {
            for (const auto& p : ice::export_cell_gradcam(l.cfg, l.manifest, l.samples, fold, view,
                                                           cam_clips)) {
              std::cout << p.string() << "\n";
            }
          }
        }
      }
      if (*eval) {
        ice::write_summary(l.cfg);
        print_tables(ice::report(l.cfg.output_dir, l.cfg.tie_break));
      }
    } else if (*rep) {
      fs::path dir = rep_f.out;
      auto tie = ice::TieBreak::LowestId;
      if (!rep_f.config.empty()) {
        const auto cfg = load_config(rep_f);
        dir = cfg.output_dir;
        tie = cfg.tie_break;
      }
      if (dir.empty()) throw ice::ConfigError("report: --out DIR or --config is required");
      print_tables(ice::report(dir, tie));
    }
  } catch (const ice::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
