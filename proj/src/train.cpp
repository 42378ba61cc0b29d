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

#include "ice/train.hpp"

#include <ATen/autocast_mode.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <sstream>

#include "ice/rng.hpp"

namespace ice {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw TrainConfigError("train." + what); };
  if (!(lr > 0)) fail("lr must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  for (double w : class_weights)
    if (!(w > 0)) fail("class_weights must be positive");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (early_stop_patience < 1 || plateau_patience < 1 || overfit_patience < 1) {
    fail("patience values must be >= 1");
  }
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(grad_clip_norm > 0)) fail("grad_clip_norm must be positive");
  if (!(plateau_factor > 0 && plateau_factor < 1)) fail("plateau_factor must lie in (0, 1)");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"class_weights", c.class_weights},
          {"max_epochs", c.max_epochs},
          {"early_stop_patience", c.early_stop_patience},
          {"batch_size", c.batch_size},
          {"grad_clip_norm", c.grad_clip_norm},
          {"use_plateau_scheduler", c.use_plateau_scheduler},
          {"plateau_patience", c.plateau_patience},
          {"plateau_factor", c.plateau_factor},
          {"overfit_train_acc", c.overfit_train_acc},
          {"overfit_patience", c.overfit_patience},
          {"mixed_precision", c.mixed_precision},
          {"deterministic", c.deterministic},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.class_weights = j.value("class_weights", c.class_weights);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.use_plateau_scheduler = j.value("use_plateau_scheduler", c.use_plateau_scheduler);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
  c.overfit_train_acc = j.value("overfit_train_acc", c.overfit_train_acc);
  c.overfit_patience = j.value("overfit_patience", c.overfit_patience);
  c.mixed_precision = j.value("mixed_precision", c.mixed_precision);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::None: return "none";
    case StopReason::EarlyStop: return "early_stop";
    case StopReason::OverfitGuard: return "overfit_guard";
    case StopReason::MaxEpochs: return "max_epochs";
  }
  return "?";
}

torch::Tensor weighted_cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets,
                                     const std::array<double, 3>& weights) {
  if (logits.dim() != 2 || logits.size(1) != 3 || targets.dim() != 1 || targets.size(0) != logits.size(0)) {
    throw std::invalid_argument("weighted_cross_entropy: expected logits (B, 3) and targets (B)");
  }
  if (targets.numel() > 0 && (targets.min().item<std::int64_t>() < 0 || targets.max().item<std::int64_t>() > 2)) {
    throw std::invalid_argument("weighted_cross_entropy: target outside {0, 1, 2}");
  }
  const auto w = torch::tensor({weights[0], weights[1], weights[2]}, logits.options());
  const auto nll = -torch::log_softmax(logits, 1).gather(1, targets.unsqueeze(1)).squeeze(1);
  const auto wy = w.index_select(0, targets);
  return (wy * nll).sum() / wy.sum();
}

TrainState early_stop_step(TrainState state, double val_acc, const TrainConfig& cfg) {
  if (val_acc > state.best_val_acc) {
    state.best_val_acc = val_acc;
    state.best_epoch = state.epoch;
    state.epochs_since_best = 0;
  } else {
    ++state.epochs_since_best;
    if (state.epochs_since_best >= cfg.early_stop_patience && state.stop_reason == StopReason::None) {
      state.stop_reason = StopReason::EarlyStop;
    }
  }
  return state;
}

TrainState overfit_guard_step(TrainState state, double train_acc, bool val_improved,
                              const TrainConfig& cfg) {
  if (train_acc > cfg.overfit_train_acc && !val_improved) {
    ++state.overfit_streak;
  } else {
    state.overfit_streak = 0;
  }
  if (state.overfit_streak >= cfg.overfit_patience && state.stop_reason == StopReason::None) {
    state.stop_reason = StopReason::OverfitGuard;
  }
  return state;
}

TrainState plateau_scheduler_step(TrainState state, double val_loss, const TrainConfig& cfg) {
  if (val_loss < state.best_val_loss) {
    state.best_val_loss = val_loss;
    state.plateau_count = 0;
  } else if (++state.plateau_count >= cfg.plateau_patience) {
    state.lr_current *= cfg.plateau_factor;
    state.plateau_count = 0;
  }
  return state;
}

void configure_determinism(bool requested) {
  const char* env = std::getenv("ICE_LOCALIZER_DETERMINISTIC");
  const bool forced = env && std::strcmp(env, "1") == 0;
  if (requested || forced) at::globalContext().setDeterministicAlgorithms(true, false);
}

torch::Tensor make_batch(std::span<const Sample* const> samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  const auto& first = samples.front()->video;
  torch::Tensor batch = torch::empty({static_cast<std::int64_t>(samples.size()), 1, first.frames(),
                                      first.rows(), first.cols()},
                                     torch::kFloat32);
  float* dst = batch.data_ptr<float>();
  for (const Sample* s : samples) {
    if (s->video.frames() != first.frames() || s->video.rows() != first.rows() ||
        s->video.cols() != first.cols()) {
      throw std::invalid_argument("make_batch: samples differ in shape");
    }
    std::memcpy(dst, s->video.data(), s->video.size() * sizeof(float));
    dst += s->video.size();
  }
  return batch;
}

namespace {

torch::Tensor make_targets(std::span<const Sample* const> samples) {
  std::vector<std::int64_t> y;
  y.reserve(samples.size());
  for (const Sample* s : samples) y.push_back(static_cast<std::int64_t>(s->pacing));
  return torch::tensor(y, torch::kInt64);
}

// Enables bfloat16 autocast on CPU for its lifetime.
class CpuAutocast {
 public:
  explicit CpuAutocast(bool enable) : enable_(enable) {
    if (!enable_) return;
    prev_enabled_ = at::autocast::is_autocast_enabled(at::kCPU);
    prev_dtype_ = at::autocast::get_autocast_dtype(at::kCPU);
    at::autocast::set_autocast_dtype(at::kCPU, at::kBFloat16);
    at::autocast::set_autocast_enabled(at::kCPU, true);
    at::autocast::increment_nesting();
  }
  ~CpuAutocast() {
    if (!enable_) return;
    if (at::autocast::decrement_nesting() == 0) at::autocast::clear_cache();
    at::autocast::set_autocast_enabled(at::kCPU, prev_enabled_);
    at::autocast::set_autocast_dtype(at::kCPU, prev_dtype_);
  }
  CpuAutocast(const CpuAutocast&) = delete;
  CpuAutocast& operator=(const CpuAutocast&) = delete;

 private:
  bool enable_;
  bool prev_enabled_ = false;
  at::ScalarType prev_dtype_ = at::kBFloat16;
};

struct EvalPass {
  double loss = 0;
  double acc = 0;
};

EvalPass evaluate_split(IceNet& model, std::span<const Sample* const> samples, const TrainConfig& cfg) {
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<torch::Tensor> logits;
  for (std::size_t i = 0; i < samples.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
    const auto batch = samples.subspan(i, std::min<std::size_t>(cfg.batch_size, samples.size() - i));
    CpuAutocast autocast(cfg.mixed_precision);
    logits.push_back(model->forward(make_batch(batch)).to(torch::kFloat32));
  }
  const auto all = torch::cat(logits);
  const auto y = make_targets(samples);
  EvalPass out;
  out.loss = weighted_cross_entropy(all, y, cfg.class_weights).item<double>();
  out.acc = all.argmax(1).eq(y).sum().item<double>() / static_cast<double>(samples.size());
  return out;
}

std::vector<std::uint8_t> generator_state() {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  const auto state = gen.get_state();
  const auto* p = state.data_ptr<std::uint8_t>();
  return {p, p + state.numel()};
}

}  // namespace

TrainResult train_fold_view(const FoldSpec& fold, ViewLabel view, std::span<const Sample> data,
                            const ModelConfig& model_cfg, const TrainConfig& cfg,
                            const AugmentConfig& augment, DataAudit* audit) {
  cfg.validate();
  augment.validate();
  model_cfg.validate();
  configure_determinism(cfg.deterministic);

  const std::set<std::string> train_ids(fold.train_ids.begin(), fold.train_ids.end());
  const std::set<std::string> val_ids(fold.val_ids.begin(), fold.val_ids.end());
  std::vector<const Sample*> originals, val_set;
  for (const auto& s : data) {
    if (s.view != view) continue;
    if (train_ids.count(s.patient_id)) {
      originals.push_back(&s);
    } else if (val_ids.count(s.patient_id)) {
      val_set.push_back(&s);
    }
  }
  const std::string cell = "fold " + std::to_string(fold.fold_index) + " view " + std::string(to_string(view));
  if (originals.empty()) throw TrainConfigError(cell + ": no training samples");
  if (val_set.empty()) throw TrainConfigError(cell + ": no validation samples");
  for (auto p : kAllPacing) {
    if (std::none_of(originals.begin(), originals.end(), [p](const Sample* s) { return s->pacing == p; })) {
      throw TrainConfigError(cell + ": training split has no " + std::string(to_string(p)) + " samples");
    }
  }

  // Augmented copies are generated once, from training samples only.
  std::vector<Sample> augmented;
  augmented.reserve(originals.size() * static_cast<std::size_t>(augment.variants));
  for (const Sample* s : originals) {
    for (auto& v : make_variants(s->video, augment, s->key())) {
      Sample copy{s->patient_id, s->clip_id, s->view, s->pacing, s->beat_index, std::move(v)};
      augmented.push_back(std::move(copy));
    }
    if (audit && augment.variants > 0) audit->augmented_patients.insert(s->patient_id);
  }
  std::vector<const Sample*> pool = originals;
  for (const auto& s : augmented) pool.push_back(&s);

  TrainResult result;
  IceNet model = build_model(model_cfg, cfg.seed);
  torch::optim::AdamW optimizer(model->parameters(),
                                torch::optim::AdamWOptions(cfg.lr).weight_decay(cfg.weight_decay));
  std::vector<torch::Tensor> params = model->parameters();

  TrainState state;
  state.lr_current = cfg.lr;
  std::vector<std::pair<std::string, torch::Tensor>> best_snapshot;
  std::vector<std::uint8_t> best_rng;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed({cfg.seed, 0x5348554646ULL, static_cast<std::uint64_t>(epoch)}));
    std::vector<const Sample*> order = pool;
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    model->train();
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    double max_norm = 0.0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      const std::span<const Sample* const> batch(order.data() + i,
                                                 std::min<std::size_t>(cfg.batch_size, order.size() - i));
      if (audit) {
        for (const Sample* s : batch) audit->optimizer_patients.insert(s->patient_id);
        audit->optimizer_samples += static_cast<std::int64_t>(batch.size());
      }
      const auto x = make_batch(batch);
      const auto y = make_targets(batch);
      torch::Tensor logits;
      {
        CpuAutocast autocast(cfg.mixed_precision);
        logits = model->forward(x);
      }
      logits = logits.to(torch::kFloat32);
      const auto loss = weighted_cross_entropy(logits, y, cfg.class_weights);
      optimizer.zero_grad();
      loss.backward();
      torch::nn::utils::clip_grad_norm_(params, cfg.grad_clip_norm);
      double sq = 0.0;
      for (const auto& p : params) {
        if (p.grad().defined()) sq += p.grad().pow(2).sum().item<double>();
      }
      max_norm = std::max(max_norm, std::sqrt(sq));
      optimizer.step();

      loss_sum += loss.item<double>() * static_cast<double>(batch.size());
      correct += logits.argmax(1).eq(y).sum().item<std::int64_t>();
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    const EvalPass val = evaluate_split(model, val_set, cfg);
    m.val_loss = val.loss;
    m.val_acc = val.acc;
    m.lr = state.lr_current;
    m.max_grad_norm_after_clip = max_norm;

    const bool improved = val.acc > state.best_val_acc;
    state.epoch = epoch;
    state = early_stop_step(state, val.acc, cfg);
    state = overfit_guard_step(state, m.train_acc, improved, cfg);
    if (cfg.use_plateau_scheduler) {
      state = plateau_scheduler_step(state, val.loss, cfg);
      for (auto& group : optimizer.param_groups()) {
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(state.lr_current);
      }
    }
    if (improved) {
      best_snapshot = snapshot_state(*model);
      best_rng = generator_state();
    }
    if (state.stop_reason == StopReason::None && epoch == cfg.max_epochs) {
      state.stop_reason = StopReason::MaxEpochs;
    }
    m.stop_reason = state.stop_reason;
    result.history.push_back(m);
    if (state.stop_reason != StopReason::None) break;
  }

  restore_state(*model, best_snapshot);
  model->eval();
  result.model = model;
  result.state = state;
  result.meta.config = model_cfg;
  result.meta.epoch = state.best_epoch;
  result.meta.val_accuracy = state.best_val_acc;
  result.meta.rng_state = std::move(best_rng);
  result.meta.metrics = {{"fold", fold.fold_index},
                         {"view", to_string(view)},
                         {"epochs_run", state.epoch},
                         {"stop_reason", to_string(state.stop_reason)},
                         {"train_samples", pool.size()},
                         {"val_samples", val_set.size()}};
  return result;
}

std::vector<SamplePrediction> predict(IceNet& model, std::span<const Sample> samples,
                                      const std::string& split, int batch_size) {
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<SamplePrediction> out;
  out.reserve(samples.size());
  std::vector<const Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  for (std::size_t i = 0; i < ptrs.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::span<const Sample* const> batch(ptrs.data() + i,
                                               std::min<std::size_t>(batch_size, ptrs.size() - i));
    const auto probs = torch::softmax(model->forward(make_batch(batch)).to(torch::kFloat64), 1);
    const auto acc = probs.accessor<double, 2>();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Sample& s = *batch[b];
      SamplePrediction p;
      p.patient_id = s.patient_id;
      p.clip_id = s.clip_id;
      p.view = s.view;
      p.true_pacing = s.pacing;
      p.beat_index = s.beat_index;
      p.split = split;
      std::array<double, 3> pr{acc[b][0], acc[b][1], acc[b][2]};
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if (pr[k] > pr[best]) best = k;
      p.predicted_pacing = static_cast<PacingClass>(best);
      p.probs = pr;
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::string epochs_to_csv(std::span<const EpochMetrics> history) {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,val_loss,val_acc,lr,stop_reason\n";
  out.precision(8);
  for (const auto& m : history) {
    out << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',' << m.val_loss << ',' << m.val_acc
        << ',' << m.lr << ',' << to_string(m.stop_reason) << '\n';
  }
  return out.str();
}

}  // namespace ice
