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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ice/corpus.hpp"

namespace ice {

struct SamplePrediction {
  std::string patient_id;
  std::string clip_id;
  ViewLabel view = ViewLabel::TV;
  PacingClass true_pacing = PacingClass::NSR;
  PacingClass predicted_pacing = PacingClass::NSR;
  int beat_index = 0;
  std::string split;                          // "val" or "test"; informational
  std::optional<std::array<double, 3>> probs; // softmax, used by the confidence tie-break

  bool operator==(const SamplePrediction&) const = default;
};

enum class TieBreak { LowestId, MeanConfidence };

/// 100 * correct / total. Throws std::invalid_argument on empty or mismatched input.
double accuracy(std::span<const PacingClass> predicted, std::span<const PacingClass> truth);
double accuracy(std::int64_t correct, std::int64_t total);

/// Half-up rounding at `decimals` places, tolerant of binary representation error.
double round_half_up(double x, int decimals = 2);

/// Mode of `votes`, ties resolved to the lowest class id. Throws on empty input.
PacingClass majority_vote(std::span<const PacingClass> votes);

/// Mode of one clip's per-beat predictions. Throws if samples span several clips.
PacingClass clip_vote(std::span<const SamplePrediction> samples, TieBreak tie = TieBreak::LowestId);

/// Mode over the available views' clip decisions for one (patient, pacing) unit.
PacingClass cross_view_vote(const std::map<ViewLabel, PacingClass>& clip_predictions);

struct ClipDecision {
  std::string patient_id;
  std::string clip_id;
  ViewLabel view = ViewLabel::TV;
  PacingClass true_pacing = PacingClass::NSR;
  PacingClass predicted = PacingClass::NSR;
  int n_samples = 0;
};

struct FusedDecision {
  std::string patient_id;
  PacingClass true_pacing = PacingClass::NSR;
  PacingClass predicted = PacingClass::NSR;
  std::vector<ViewLabel> views;
};

/// One decision per clip id, in first-appearance order.
std::vector<ClipDecision> clip_decisions(std::span<const SamplePrediction> samples,
                                         TieBreak tie = TieBreak::LowestId);
/// One decision per (patient, true pacing) unit, in first-appearance order.
std::vector<FusedDecision> fuse_views(std::span<const ClipDecision> clips);

struct FoldReport {
  int fold_index = 0;
  std::array<std::optional<double>, 4> view_accuracy{};
  std::optional<double> cross_view_accuracy;
  std::array<int, 4> view_clips{};
  std::array<int, 4> view_correct{};
  int fused_units = 0;
  int fused_correct = 0;
  int samples = 0;
  int samples_correct = 0;
};

/// Per-view clip-level accuracy and cross-view accuracy for one fold. Views without any
/// clip have no value rather than a zero.
FoldReport fold_report(int fold_index, std::span<const SamplePrediction> samples,
                       TieBreak tie = TieBreak::LowestId);

struct MeanRow {
  std::array<std::optional<double>, 4> view_accuracy{};
  std::optional<double> cross_view_accuracy;
};

/// Column-wise arithmetic mean over the reports that have a value, rounded half-up to
/// two decimals.
MeanRow aggregate_means(std::span<const FoldReport> reports);

/// "Fold,TV,MV,LPV,CT,Cross-View" with 1-based fold numbers, then a Mean row.
/// Missing cells are written as NA.
std::string render_table_csv(std::span<const FoldReport> reports);

std::string prediction_to_json(const SamplePrediction& p);
SamplePrediction prediction_from_json(std::string_view line);
void write_predictions(const std::filesystem::path& path, std::span<const SamplePrediction> preds);
std::vector<SamplePrediction> read_predictions(const std::filesystem::path& path);

}  // namespace ice
