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

#include <cmath>
#include <functional>

#include "torch_doctest.hpp"
#include "ice/experiment.hpp"
#include "ice/train.hpp"
#include "test_util.hpp"

using namespace ice;

namespace {

/// Six small synthetic patients, generated once per process.
struct TinyCorpus {
  ice::testing::TempDir dir{"tiny_train"};
  DatasetManifest manifest;
  std::vector<Sample> samples;
  std::vector<FoldSpec> folds;

  TinyCorpus() {
    SynthConfig synth;
    synth.rows = 48;
    synth.cols = 64;
    synth.min_beats = 6;
    synth.max_beats = 8;
    manifest = generate_synthetic(6, 21, synth, dir.path());
    PreprocessConfig pre;
    pre.crop_rows = 40;
    pre.crop_cols = 56;
    pre.resize_factor = {1, 1};
    const std::array<ViewLabel, 1> views{ViewLabel::MV};
    samples = load_samples(manifest, pre, views);
    std::vector<std::string> ids;
    for (const auto& p : manifest.patients) ids.push_back(p.patient_id);
    folds = make_folds(ids, 3, 1);
  }
};

TinyCorpus& tiny() {
  static TinyCorpus corpus;
  return corpus;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.backbone = Backbone::Reduced;
  cfg.width_divisor = 8;
  return cfg;
}

TrainConfig tiny_train(int epochs) {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.max_epochs = epochs;
  cfg.early_stop_patience = epochs;
  cfg.overfit_patience = epochs;
  cfg.seed = 9;
  return cfg;
}

AugmentConfig no_augment() {
  AugmentConfig a;
  a.variants = 0;
  return a;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("weighted cross entropy") {
    const std::array<double, 3> ones{1, 1, 1};
    const auto y = torch::tensor({0, 1, 2}, torch::kInt64);
    const double uniform = weighted_cross_entropy(torch::zeros({3, 3}), y, ones).item<double>();
    CHECK(uniform == doctest::Approx(std::log(3.0)).epsilon(1e-6));
    const double reweighted = weighted_cross_entropy(torch::zeros({3, 3}), y, {1, 2, 1}).item<double>();
    CHECK(reweighted == doctest::Approx(std::log(3.0)).epsilon(1e-6));

    auto confident = torch::full({3, 3}, -20.0);
    confident.index_put_({torch::arange(3), y}, 20.0);
    CHECK(weighted_cross_entropy(confident, y, ones).item<double>() < 1e-12);

    // Hand-computed: logits (2,0,0) with target 0 and (0,0,0) with target 1, weights (1,3,1).
    const auto logits = torch::tensor({{2.0, 0.0, 0.0}, {0.0, 0.0, 0.0}}, torch::kFloat64);
    const double l0 = -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
    const double l1 = std::log(3.0);
    const double got = weighted_cross_entropy(logits, torch::tensor({0, 1}, torch::kInt64), {1, 3, 1})
                           .item<double>();
    CHECK(got == doctest::Approx((l0 + 3 * l1) / 4).epsilon(1e-12));

    CHECK_THROWS(weighted_cross_entropy(torch::zeros({1, 3}), torch::tensor({3}, torch::kInt64), ones));
    CHECK_THROWS(weighted_cross_entropy(torch::zeros({1, 3}), torch::tensor({-1}, torch::kInt64), ones));
  }

  TEST_CASE("early stopping counts epochs without strict improvement") {
    TrainConfig cfg;
    cfg.early_stop_patience = 20;
    TrainState s;
    // Best accuracy at epoch 1, flat afterwards.
    for (int e = 1; e <= 30 && s.stop_reason == StopReason::None; ++e) {
      s.epoch = e;
      s = early_stop_step(s, 50.0, cfg);
    }
    CHECK(s.stop_reason == StopReason::EarlyStop);
    CHECK(s.epoch == 21);
    CHECK(s.best_epoch == 1);

    TrainState r;
    const double accs[] = {10, 20, 20, 30};
    for (int e = 1; e <= 4; ++e) {
      r.epoch = e;
      r = early_stop_step(r, accs[e - 1], cfg);
    }
    CHECK(r.best_epoch == 4);
    CHECK(r.epochs_since_best == 0);
    CHECK(r.best_val_acc == 30);
  }

  TEST_CASE("overfit guard") {
    TrainConfig cfg;
    cfg.overfit_train_acc = 0.9;
    cfg.overfit_patience = 10;
    TrainState s;
    int e = 0;
    while (s.stop_reason == StopReason::None && e < 50) {
      s.epoch = ++e;
      s = overfit_guard_step(s, 0.95, false, cfg);
    }
    CHECK(s.stop_reason == StopReason::OverfitGuard);
    CHECK(e == 10);

    TrainState t;
    for (int i = 1; i <= 9; ++i) t = overfit_guard_step(t, 0.95, false, cfg);
    t = overfit_guard_step(t, 0.95, true, cfg);  // improvement resets the streak
    for (int i = 1; i <= 9; ++i) t = overfit_guard_step(t, 0.95, false, cfg);
    CHECK(t.stop_reason == StopReason::None);
    t = overfit_guard_step(t, 0.90, false, cfg);  // not above the threshold
    CHECK(t.stop_reason == StopReason::None);
    CHECK(t.overfit_streak == 0);
  }

  TEST_CASE("plateau scheduler halves the rate") {
    TrainConfig cfg;
    cfg.lr = 1e-5;
    cfg.use_plateau_scheduler = true;
    cfg.plateau_patience = 5;
    TrainState s;
    s.lr_current = cfg.lr;
    s = plateau_scheduler_step(s, 1.0, cfg);
    std::vector<double> rates;
    for (int e = 0; e < 12; ++e) {
      s = plateau_scheduler_step(s, 1.0, cfg);
      rates.push_back(s.lr_current);
    }
    CHECK(rates[3] == doctest::Approx(1e-5));
    CHECK(rates[4] == doctest::Approx(5e-6));
    CHECK(rates[9] == doctest::Approx(2.5e-6));
    s = plateau_scheduler_step(s, 0.5, cfg);
    CHECK(s.plateau_count == 0);
  }

  TEST_CASE("config validation and serialization") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.lr = 2.5e-4;
    cfg.class_weights = {1, 2, 3};
    cfg.mixed_precision = true;
    const auto back = train_config_from_json(to_json(cfg));
    CHECK(back.lr == cfg.lr);
    CHECK(back.class_weights == cfg.class_weights);
    CHECK(back.mixed_precision);
    for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
             [](TrainConfig& c) { c.lr = 0; }, [](TrainConfig& c) { c.batch_size = 0; },
             [](TrainConfig& c) { c.class_weights[1] = -1; },
             [](TrainConfig& c) { c.grad_clip_norm = 0; },
             [](TrainConfig& c) { c.max_epochs = 0; }}) {
      TrainConfig bad;
      mutate(bad);
      CHECK_THROWS_AS(bad.validate(), TrainConfigError);
    }
  }

  TEST_CASE("learns a small corpus and stays within its split") {
    auto& c = tiny();
    REQUIRE(c.samples.size() > 0);
    const FoldSpec& fold = c.folds[0];
    DataAudit audit;
    AugmentConfig aug;
    aug.variants = 1;
    aug.seed = 4;
    const auto result = train_fold_view(fold, ViewLabel::MV, c.samples, tiny_model(), tiny_train(20), aug, &audit);
    REQUIRE_FALSE(result.history.empty());
    double best_train = 0;
    for (const auto& m : result.history) best_train = std::max(best_train, m.train_acc);
    MESSAGE("best training accuracy " << best_train << " over " << result.history.size() << " epochs");
    CHECK(best_train > 0.9);

    const std::set<std::string> train_ids(fold.train_ids.begin(), fold.train_ids.end());
    CHECK(audit.optimizer_patients == train_ids);
    CHECK(audit.augmented_patients == train_ids);
    for (const auto& m : result.history) CHECK(m.max_grad_norm_after_clip <= 1.0 + 1e-6);

    // The returned weights are those of the best validation epoch.
    std::vector<Sample> val;
    for (const auto& s : c.samples)
      if (std::find(fold.val_ids.begin(), fold.val_ids.end(), s.patient_id) != fold.val_ids.end()) val.push_back(s);
    IceNet model = result.model;
    const auto preds = predict(model, val, "val");
    int correct = 0;
    for (const auto& p : preds) correct += p.predicted_pacing == p.true_pacing;
    CHECK(correct / static_cast<double>(preds.size()) ==
          doctest::Approx(result.state.best_val_acc).epsilon(1e-9));
    CHECK(result.meta.epoch == result.state.best_epoch);
  }

  TEST_CASE("identical seeds give identical loss curves") {
    auto& c = tiny();
    const auto a = train_fold_view(c.folds[1], ViewLabel::MV, c.samples, tiny_model(), tiny_train(3), no_augment());
    const auto b = train_fold_view(c.folds[1], ViewLabel::MV, c.samples, tiny_model(), tiny_train(3), no_augment());
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].train_loss == b.history[i].train_loss);
      CHECK(a.history[i].val_loss == b.history[i].val_loss);
    }
    CHECK(epochs_to_csv(a.history) == epochs_to_csv(b.history));
  }

  TEST_CASE("mixed precision tracks full precision") {
    auto& c = tiny();
    TrainConfig cfg = tiny_train(6);
    const auto full = train_fold_view(c.folds[2], ViewLabel::MV, c.samples, tiny_model(), cfg, no_augment());
    cfg.mixed_precision = true;
    const auto mixed = train_fold_view(c.folds[2], ViewLabel::MV, c.samples, tiny_model(), cfg, no_augment());
    MESSAGE("best val accuracy fp32 " << full.state.best_val_acc << " mixed " << mixed.state.best_val_acc);
    CHECK(std::abs(full.state.best_val_acc - mixed.state.best_val_acc) <= 0.02);
  }

  TEST_CASE("bad inputs are reported") {
    auto& c = tiny();
    FoldSpec empty = c.folds[0];
    empty.train_ids.clear();
    CHECK_THROWS(train_fold_view(empty, ViewLabel::MV, c.samples, tiny_model(), tiny_train(1), no_augment()));
    // No samples of this view were loaded.
    CHECK_THROWS(train_fold_view(c.folds[0], ViewLabel::TV, c.samples, tiny_model(), tiny_train(1), no_augment()));
  }
}
