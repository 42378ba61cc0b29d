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

#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ice/augment.hpp"
#include "ice/corpus.hpp"
#include "ice/evaluate.hpp"
#include "ice/gradcam.hpp"
#include "ice/model.hpp"
#include "ice/preprocess.hpp"
#include "ice/train.hpp"
#include "json.hpp"

namespace ice {

/// Invalid or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SyntheticSource {
  int patients = 12;
  std::uint64_t seed = 0;
  SynthConfig synth;
  /// Where the corpus is generated; defaults to <output_dir>/corpus.
  std::filesystem::path dir;
};

struct ExperimentConfig {
  std::filesystem::path manifest;           // used when `synthetic` is absent
  std::optional<SyntheticSource> synthetic;
  PreprocessConfig preprocess;
  AugmentConfig augment;
  int n_folds = 10;
  int window = 4;
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path output_dir = "out";
  std::vector<ViewLabel> views{kAllViews.begin(), kAllViews.end()};
  std::vector<int> folds;  // 0-based; empty means all
  TieBreak tie_break = TieBreak::LowestId;
  /// Test clips exported as Grad-CAM animations per cell (first beat of each clip).
  int gradcam_clips = 0;
  std::string gradcam_layer = kDefaultGradcamLayer;

  /// Throws ConfigError. With `check_paths`, the manifest must exist.
  void validate(bool check_paths = true) const;
  std::vector<int> selected_folds() const;
};

/// Relative paths are resolved against `base_dir`. Unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                             const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Every field, defaults included.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Loads the manifest, generating the synthetic corpus first when needed. A synthetic
/// corpus already present with the same parameters is reused.
DatasetManifest prepare_corpus(const ExperimentConfig& cfg);

/// Preprocessed heartbeats of every clip in `views`, in manifest order.
std::vector<Sample> load_samples(const DatasetManifest& manifest, const PreprocessConfig& cfg,
                                 std::span<const ViewLabel> views);

std::filesystem::path cell_dir(const std::filesystem::path& out, int fold, ViewLabel view);

/// What reached the optimizer and the augmenter in one cell, compared with the fold.
struct LeakageAudit {
  std::set<std::string> optimizer_patients;
  std::set<std::string> augmented_patients;
  std::set<std::string> expected_patients;  // training patients that have this view
  std::int64_t optimizer_samples = 0;
  std::int64_t augment_calls = 0;
  std::int64_t foreign_augment_calls = 0;  // calls on samples outside the training split

  bool clean() const;
};

struct CellOutcome {
  int fold = 0;
  ViewLabel view = ViewLabel::TV;
  std::string status;  // "complete", "failed"
  bool trained = false;  // false when reused from a previous run
  std::string error;
  nlohmann::json info = nlohmann::json::object();
};

struct ExperimentResult {
  std::vector<CellOutcome> cells;
  std::vector<FoldReport> val_reports;
  std::vector<FoldReport> test_reports;
  nlohmann::json summary;
};

/// Trains and evaluates every selected (fold, view) cell, then writes the summary.
/// Completed cells with a matching fingerprint are reused without training.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Trains and evaluates one cell and writes its artifacts.
CellOutcome run_cell(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                     std::span<const Sample> samples, int fold, ViewLabel view);

/// Recomputes a cell's predictions from its checkpoint.
void evaluate_cell(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                   std::span<const Sample> samples, int fold, ViewLabel view);

/// Grad-CAM animations for a cell's test clips; returns the written paths.
std::vector<std::filesystem::path> export_cell_gradcam(const ExperimentConfig& cfg,
                                                       const DatasetManifest& manifest,
                                                       std::span<const Sample> samples, int fold,
                                                       ViewLabel view, int max_clips);

struct ReportTables {
  std::vector<FoldReport> val;
  std::vector<FoldReport> test;
  std::string val_csv;
  std::string test_csv;
};

/// Builds tables from the prediction files under an experiment directory. Throws if no
/// predictions are found.
ReportTables report(const std::filesystem::path& experiment_dir,
                    TieBreak tie = TieBreak::LowestId);

/// Writes summary/{val_table.csv, test_table.csv, summary.json} from the cell artifacts
/// on disk and returns the summary document.
nlohmann::json write_summary(const ExperimentConfig& cfg);

}  // namespace ice
