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
#include <limits>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ice/augment.hpp"
#include "ice/checkpoint.hpp"
#include "ice/corpus.hpp"
#include "ice/evaluate.hpp"
#include "ice/folds.hpp"
#include "ice/model.hpp"
#include "ice/video.hpp"
#include "json.hpp"

namespace ice {

struct TrainConfig {
  double lr = 1e-5;
  double weight_decay = 1e-3;
  std::array<double, 3> class_weights{1.0, 1.0, 1.0};
  int max_epochs = 150;
  int early_stop_patience = 20;
  int batch_size = 8;
  double grad_clip_norm = 1.0;
  bool use_plateau_scheduler = false;
  int plateau_patience = 5;
  double plateau_factor = 0.5;
  double overfit_train_acc = 0.90;
  int overfit_patience = 10;
  bool mixed_precision = false;
  bool deterministic = true;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

enum class StopReason { None, EarlyStop, OverfitGuard, MaxEpochs };
std::string_view to_string(StopReason r);

struct TrainState {
  int epoch = 0;  // last completed epoch, 1-based
  double best_val_acc = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int epochs_since_best = 0;
  double lr_current = 0.0;
  StopReason stop_reason = StopReason::None;
  int overfit_streak = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int plateau_count = 0;
};

class TrainConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i].
torch::Tensor weighted_cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets,
                                     const std::array<double, 3>& weights);

/// Strict improvement (> best) resets the patience counter and records `state.epoch` as
/// the best epoch; otherwise the counter grows and reaching the patience stops training.
TrainState early_stop_step(TrainState state, double val_acc, const TrainConfig& cfg);
/// Stops once train accuracy has exceeded the threshold, without validation improvement,
/// for `overfit_patience` consecutive epochs.
TrainState overfit_guard_step(TrainState state, double train_acc, bool val_improved,
                              const TrainConfig& cfg);
/// Multiplies the learning rate by `plateau_factor` after `plateau_patience` epochs
/// without a strictly lower validation loss.
TrainState plateau_scheduler_step(TrainState state, double val_loss, const TrainConfig& cfg);

/// One preprocessed heartbeat.
struct Sample {
  std::string patient_id;
  std::string clip_id;
  ViewLabel view = ViewLabel::TV;
  PacingClass pacing = PacingClass::NSR;
  int beat_index = 0;
  VideoTensor video;

  std::string key() const { return patient_id + "/" + clip_id + "/" + std::to_string(beat_index); }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0, lr = 0;
  double max_grad_norm_after_clip = 0;
  StopReason stop_reason = StopReason::None;
};

/// Records what reached the optimizer and the augmenter during training.
struct DataAudit {
  std::set<std::string> optimizer_patients;
  std::set<std::string> augmented_patients;
  std::int64_t optimizer_samples = 0;
};

struct TrainResult {
  IceNet model{nullptr};  // best-validation weights, evaluation mode
  CheckpointMeta meta;
  std::vector<EpochMetrics> history;
  TrainState state;
};

/// Trains one model for `view` on the fold's training patients, selecting the epoch with
/// the highest sample-level validation accuracy (earliest on ties).
TrainResult train_fold_view(const FoldSpec& fold, ViewLabel view, std::span<const Sample> data,
                            const ModelConfig& model_cfg, const TrainConfig& cfg,
                            const AugmentConfig& augment, DataAudit* audit = nullptr);

/// Stacks samples into a (B, 1, T, H, W) float tensor.
torch::Tensor make_batch(std::span<const Sample* const> samples);

/// Evaluation-mode predictions with softmax probabilities.
std::vector<SamplePrediction> predict(IceNet& model, std::span<const Sample> samples,
                                      const std::string& split, int batch_size = 8);

std::string epochs_to_csv(std::span<const EpochMetrics> history);

/// Applies ICE_LOCALIZER_DETERMINISTIC / cfg.deterministic to torch's global context.
void configure_determinism(bool requested);

}  // namespace ice
