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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits nonzero on any
// failure. Criteria may be selected by number on the command line (default: all).

#include <torch/torch.h>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "ice/augment.hpp"
#include "ice/evaluate.hpp"
#include "ice/experiment.hpp"
#include "ice/folds.hpp"
#include "ice/gradcam.hpp"
#include "ice/model.hpp"
#include "ice/preprocess.hpp"
#include "ice/train.hpp"
#include "reference_tables.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace ice;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

std::string fixed2(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

// ---------------------------------------------------------------------------

Verdict table_means() {
  Verdict v;
  const std::pair<const char*, std::array<double, 5>> tables[] = {
      {"reference_val_table.csv", {71.27, 77.09, 73.03, 62.97, 76.27}},
      {"reference_test_table.csv", {61.53, 65.05, 63.36, 54.73, 66.20}}};
  for (const auto& [file, want] : tables) {
    const auto reports = ice::testing::reports_from_table(ice::testing::fixture(file));
    v.require(reports.size() == 10, std::string(file) + " has 10 folds");
    const MeanRow m = aggregate_means(reports);
    std::array<double, 5> got{};
    for (int i = 0; i < 4; ++i) got[i] = m.view_accuracy[i].value_or(-1);
    got[4] = m.cross_view_accuracy.value_or(-1);
    for (int i = 0; i < 5; ++i) v.require(fixed2(got[i]) == fixed2(want[i]), std::string(file) + " column " + std::to_string(i));
    v.detail << file << " mean cross-view " << fixed2(got[4]) << ". ";
  }
  return v;
}

Verdict fold_engine() {
  Verdict v;
  std::vector<std::string> ids;
  for (int i = 0; i < 39; ++i) ids.push_back("P" + std::to_string(i));
  const auto folds = make_folds(ids, 10, 4);
  v.require(folds.size() == 10, "10 folds");
  std::set<std::string> test_union, val_union;
  for (const auto& f : folds) {
    v.require(f.train_ids.size() == 31 && f.val_ids.size() == 4 && f.test_ids.size() == 4,
              "fold " + std::to_string(f.fold_index) + " is 31/4/4");
    v.require(check_disjoint(f, ids), "fold " + std::to_string(f.fold_index) + " disjoint");
    // Independent membership: each id belongs to exactly one subset.
    for (const auto& id : ids) {
      const int n = static_cast<int>(std::count(f.train_ids.begin(), f.train_ids.end(), id) +
                                     std::count(f.val_ids.begin(), f.val_ids.end(), id) +
                                     std::count(f.test_ids.begin(), f.test_ids.end(), id));
      v.require(n == 1, id + " appears once in fold " + std::to_string(f.fold_index));
    }
    test_union.insert(f.test_ids.begin(), f.test_ids.end());
    val_union.insert(f.val_ids.begin(), f.val_ids.end());
  }
  v.require(test_union.size() == 39, "test sets cover all patients");
  v.require(val_union.size() == 39, "validation sets cover all patients");
  const auto& last = folds[9].test_ids;
  v.require(std::find(last.begin(), last.end(), ids[0]) != last.end(), "fold 9 test wraps to index 0");
  v.detail << "fold 9 test = {";
  for (std::size_t i = 0; i < last.size(); ++i) v.detail << (i ? "," : "") << last[i];
  v.detail << "}";
  return v;
}

Verdict preprocessing_contract() {
  Verdict v;
  std::mt19937_64 rng(2026);
  std::uniform_int_distribution<int> len(1, 200);
  std::uniform_int_distribution<int> byte(0, 255);
  // A pool of random frames; clips are assembled from it so generation stays cheap.
  constexpr std::int64_t kRows = 708, kCols = 1016, kPool = 7;
  std::vector<std::vector<std::uint8_t>> pool(kPool, std::vector<std::uint8_t>(kRows * kCols));
  for (auto& f : pool)
    for (auto& b : f) b = static_cast<std::uint8_t>(byte(rng));

  PreprocessConfig quarter;  // defaults: 553x756 crop, resize 1/4
  PreprocessConfig full;
  full.resize_factor = {1, 1};
  std::int64_t frames_total = 0;
  double pipeline_seconds = 0;
  for (int i = 0; i < 200; ++i) {
    const std::int64_t t = len(rng);
    frames_total += t;
    RawVideo raw(t, kRows, kCols);
    const std::int64_t offset = static_cast<std::int64_t>(rng() % kPool);
    for (std::int64_t k = 0; k < t; ++k) {
      const auto& src = pool[static_cast<std::size_t>((k + offset) % kPool)];
      std::copy(src.begin(), src.end(), raw.frame(k).begin());
    }
    const std::vector<BeatAnnotation> beat{{0, 0, t}};
    for (const auto* cfg : {&quarter, &full}) {
      const auto p0 = std::chrono::steady_clock::now();
      const auto out = preprocess_pipeline(raw, beat, *cfg);
      pipeline_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - p0).count();
      const std::array<std::int64_t, 4> want =
          cfg == &quarter ? std::array<std::int64_t, 4>{1, 32, 138, 189} : std::array<std::int64_t, 4>{1, 32, 553, 756};
      const bool ok = out.size() == 1 && out[0].shape() == want &&
                      std::all_of(out[0].values().begin(), out[0].values().end(),
                                  [](float x) { return x >= 0.0f && x <= 1.0f; });
      v.require(ok, "clip " + std::to_string(i) + " (T=" + std::to_string(t) + ")");
      if (!ok) return v;
    }
  }
  // The budget covers the pipeline; synthesizing 15 GB of random input is not timed.
  v.require(pipeline_seconds < 30.0, "pipeline within 30 s");
  v.detail << "200 clips, " << frames_total << " raw frames at 708x1016, " << std::setprecision(1)
           << std::fixed << pipeline_seconds << " s in the pipeline";
  return v;
}

Verdict augmentation_properties() {
  Verdict v;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  VideoTensor x(32, 24, 24);
  for (auto& p : x.values()) p = u(rng);

  const auto same = brightness_contrast_jitter(x, 1.0, 1.0);
  float diff = 0;
  for (std::size_t i = 0; i < x.size(); ++i) diff = std::max(diff, std::abs(same.values()[i] - x.values()[i]));
  v.require(diff == 0.0f, "b=c=1 identity");

  VideoTensor half(32, 24, 24, 0.5f);
  for (double c : {0.5, 0.8, 1.0, 1.3, 1.5}) {
    const auto y = brightness_contrast_jitter(half, 1.2, c);
    for (float p : y.values()) {
      if (std::abs(p - 0.6f) > 1e-6f) {
        v.require(false, "constant 0.5 maps to 0.6 at c=" + std::to_string(c));
        break;
      }
    }
  }

  AugmentConfig cfg;
  cfg.variants = 1;
  for (int i = 0; i < 1000; ++i) {
    cfg.seed = static_cast<std::uint64_t>(i);
    const auto vs = make_variants(x, cfg, "S" + std::to_string(i));
    for (const auto& y : vs) {
      if (!std::all_of(y.values().begin(), y.values().end(), [](float p) { return p >= 0.0f && p <= 1.0f; })) {
        v.require(false, "bounded output on draw " + std::to_string(i));
        i = 1000;
        break;
      }
    }
  }
  cfg.variants = 3;
  cfg.seed = 77;
  v.require(make_variants(x, cfg, "P01/c/0") == make_variants(x, cfg, "P01/c/0"), "per-sample determinism");
  v.require(make_variants(x, cfg, "P01/c/0") != make_variants(x, cfg, "P01/c/1"), "keys decorrelate samples");
  v.detail << "identity max diff " << diff << ", 1000 bounded draws";
  return v;
}

Verdict vote_oracle() {
  Verdict v;
  const auto vectors = ice::testing::all_vote_vectors(6);
  std::size_t clip_cases = 0, view_cases = 0;
  for (const auto& votes : vectors) {
    std::vector<SamplePrediction> beats;
    for (std::size_t i = 0; i < votes.size(); ++i) {
      SamplePrediction p;
      p.patient_id = "P";
      p.clip_id = "C";
      p.beat_index = static_cast<int>(i);
      p.predicted_pacing = pacing_from_id(votes[i]);
      beats.push_back(p);
    }
    ++clip_cases;
    if (static_cast<int>(clip_vote(beats)) != ice::testing::brute_force_mode(votes)) {
      v.require(false, "clip vote disagrees");
      return v;
    }
    if (votes.size() > 4) continue;
    // Every assignment of these decisions to a subset of views of matching size.
    for (int mask = 1; mask < 16; ++mask) {
      if (__builtin_popcount(static_cast<unsigned>(mask)) != static_cast<int>(votes.size())) continue;
      std::map<ViewLabel, PacingClass> decisions;
      std::size_t k = 0;
      for (int b = 0; b < 4; ++b)
        if (mask & (1 << b)) decisions[kAllViews[static_cast<std::size_t>(b)]] = pacing_from_id(votes[k++]);
      ++view_cases;
      if (static_cast<int>(cross_view_vote(decisions)) != ice::testing::brute_force_mode(votes)) {
        v.require(false, "cross-view vote disagrees");
        return v;
      }
    }
  }
  v.detail << clip_cases << " clip vectors, " << view_cases << " view subsets";
  return v;
}

Verdict model_numerics() {
  Verdict v;
  ModelConfig full;
  IceNet net = build_model(full, 0);
  {
    torch::NoGradGuard no_grad;
    const auto y = net->adapter_conv()->forward(torch::zeros({1, 1, 32, 553, 756}));
    v.require(y.sizes().vec() == std::vector<std::int64_t>({1, 64, 26, 185, 252}), "adapter output shape");
    const auto shapes = IceNetImpl::feature_shapes(full, {32, 553, 756});
    v.require(shapes[0] == std::array<std::int64_t, 3>({26, 185, 252}), "convolution arithmetic");
  }

  ModelConfig reduced;
  reduced.backbone = Backbone::Reduced;
  IceNet m = build_model(reduced, 3);
  m->to(torch::kFloat64);
  m->eval();
  torch::manual_seed(0);
  const auto x = torch::rand({2, 1, 32, 32, 32}, torch::kFloat64);
  const auto y = torch::tensor({0, 2}, torch::kInt64);
  auto loss = [&] { return weighted_cross_entropy(m->forward(x), y, {1.0, 1.0, 1.0}); };
  m->zero_grad();
  loss().backward();
  const auto analytic = m->adapter_conv()->weight.grad().clone().flatten();
  auto flat = m->adapter_conv()->weight.detach().flatten();
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::int64_t> pick(0, flat.numel() - 1);
  const double h = 1e-7;
  double worst = 0;
  torch::NoGradGuard no_grad;
  for (int k = 0; k < 20; ++k) {
    const auto i = pick(rng);
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double up = loss().item<double>();
    flat[i] = orig - h;
    const double down = loss().item<double>();
    flat[i] = orig;
    const double num = (up - down) / (2 * h), a = analytic[i].item<double>();
    worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-7}));
  }
  v.require(worst <= 1e-3, "gradient check");
  v.detail << "adapter (1,64,26,185,252), worst relative gradient error " << worst;
  return v;
}

Verdict stopping_rules() {
  Verdict v;
  TrainConfig cfg;  // patience 20, overfit 0.90 / 10, plateau 5 / 0.5
  TrainState s;
  int stop = 0;
  for (int e = 1; e <= 40 && !stop; ++e) {
    s.epoch = e;
    s = early_stop_step(s, e <= 3 ? 0.1 * e : 0.2, cfg);  // best at epoch 3
    if (s.stop_reason != StopReason::None) stop = e;
  }
  v.require(stop == 23 && s.stop_reason == StopReason::EarlyStop, "early stop after 20 stagnant epochs");

  TrainState g;
  int guard = 0;
  for (int e = 1; e <= 40 && !guard; ++e) {
    const double train_acc = e < 5 ? 0.5 : 0.95;  // exceeds 0.90 from epoch 5
    g = overfit_guard_step(g, train_acc, false, cfg);
    if (g.stop_reason != StopReason::None) guard = e;
  }
  v.require(guard == 14 && g.stop_reason == StopReason::OverfitGuard, "overfit guard at the 10th stagnant epoch");
  TrainState h;
  for (int e = 1; e <= 40; ++e) h = overfit_guard_step(h, 0.90, false, cfg);  // not strictly above
  v.require(h.stop_reason == StopReason::None, "guard needs accuracy above 0.90");

  cfg.lr = 1e-5;
  TrainState p;
  p.lr_current = cfg.lr;
  p = plateau_scheduler_step(p, 1.0, cfg);
  int halved = 0;
  for (int e = 1; e <= 6 && !halved; ++e) {
    p = plateau_scheduler_step(p, 1.0, cfg);
    if (p.lr_current < cfg.lr) halved = e;
  }
  v.require(halved == 5 && std::abs(p.lr_current - 5e-6) < 1e-15, "plateau halves to 5e-6");
  v.detail << "early stop at epoch " << stop << ", guard at epoch " << guard << ", lr " << p.lr_current
           << " after " << halved << " stagnant epochs";
  return v;
}

Verdict gradcam_properties() {
  Verdict v;
  ModelConfig cfg;
  cfg.backbone = Backbone::Reduced;
  cfg.width_divisor = 8;
  IceNet m = build_model(cfg, 4);
  VideoTensor x(32, 64, 64);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& p : x.values()) p = u(rng);
  const Heatmap h = compute_gradcam(*m, x, 1);
  v.require(h.values.frames() == 32 && h.values.rows() == 64 && h.values.cols() == 64, "heatmap dims");
  v.require(std::all_of(h.values.values().begin(), h.values.values().end(), [](float p) { return p >= 0.0f && p <= 1.0f; }),
            "heatmap range");

  // Zero the classifier: every logit is constant, so every gradient vanishes.
  {
    torch::NoGradGuard no_grad;
    m->fc()->weight.zero_();
  }
  const Heatmap z = compute_gradcam(*m, x, 0);
  v.require(std::all_of(z.values.values().begin(), z.values.values().end(), [](float p) { return p == 0.0f; }),
            "zero-gradient map is zero");

  ice::testing::TempDir dir("accept_cam");
  OverlayMeta meta{"P03", "P03_TV_NSR", PacingClass::NSR, PacingClass::DIST};
  const auto path = export_overlay(x, h, meta, dir.path());
  const std::string bytes = ice::testing::slurp(path);
  const auto gif = decode_gif(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  const std::int64_t pw = 64 * overlay_scale(64);
  v.require(gif.frames.size() == 32, "32 animation frames");
  v.require(gif.width >= 2 * pw + kOverlayPanelGap, "two panels per frame");
  v.detail << gif.frames.size() << " frames of " << gif.width << "x" << gif.height;
  return v;
}

// ---------------------------------------------------------------------------
// End-to-end synthetic run, shared by criteria 8 and 10.

struct EndToEnd {
  bool ran = false;
  std::string error;
  ExperimentConfig cfg;
  ExperimentResult first;
  double first_seconds = 0, second_seconds = 0;
  std::string summary_a, summary_b;
};

fs::path work_root() {
  if (const char* env = std::getenv("ICE_ACCEPTANCE_DIR")) return env;
  return fs::temp_directory_path() / "ice_acceptance";
}

EndToEnd& end_to_end() {
  static EndToEnd e = [] {
    EndToEnd r;
    r.ran = true;
    try {
      const fs::path root = work_root();
      fs::remove_all(root / "run_a");
      fs::remove_all(root / "run_b");
      ExperimentConfig cfg = load_experiment_config(fs::path(ICE_CONFIG_DIR) / "desk_synthetic.json");
      cfg.synthetic->dir = root / "corpus";
      cfg.manifest = cfg.synthetic->dir / "manifest.json";
      cfg.output_dir = root / "run_a";
      r.cfg = cfg;
      auto t0 = std::chrono::steady_clock::now();
      r.first = run_experiment(cfg);
      r.first_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      r.summary_a = ice::testing::slurp(cfg.output_dir / "summary" / "summary.json");

      cfg.output_dir = root / "run_b";
      t0 = std::chrono::steady_clock::now();
      run_experiment(cfg);
      r.second_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      r.summary_b = ice::testing::slurp(cfg.output_dir / "summary" / "summary.json");
    } catch (const std::exception& ex) {
      r.error = ex.what();
    }
    return r;
  }();
  return e;
}

Verdict synthetic_run() {
  Verdict v;
  auto& e = end_to_end();
  if (!e.error.empty()) {
    v.require(false, e.error);
    return v;
  }
  const auto& c = e.cfg;
  v.require(c.synthetic && c.synthetic->patients == 12, "12 patients");
  v.require(c.n_folds == 3 && c.window == 2 && c.views.size() == 4, "3 folds of window 2 over 4 views");
  v.require(c.model.backbone == Backbone::Reduced && c.train.max_epochs <= 25, "reduced backbone, <= 25 epochs");
  const auto rect = c.preprocess.resize_factor;
  v.require(rect.scale(c.preprocess.crop_rows) == 64 && rect.scale(c.preprocess.crop_cols) == 64, "64x64 input");

  const json s = json::parse(e.summary_a);
  v.require(s["complete"] == true, "all cells complete");
  int units = 0, correct = 0;
  for (const auto& f : s["test"]["folds"]) {
    units += f["fused_units"].get<int>();
    correct += f["fused_correct"].get<int>();
  }
  const double pooled = units ? 100.0 * correct / units : 0.0;
  const double mean = s["test"]["mean"]["cross_view"].is_number() ? s["test"]["mean"]["cross_view"].get<double>() : 0.0;
  v.require(pooled >= 80.0 && mean >= 80.0, "cross-view test accuracy >= 80%");
  v.require(e.first_seconds <= 1800.0, "single run within 30 minutes");
  v.require(e.summary_a == e.summary_b, "byte-identical summary across equal-seed runs");
  v.detail << "cross-view test " << fixed2(pooled) << "% pooled (" << correct << "/" << units << "), mean "
           << fixed2(mean) << "%; runs " << std::lround(e.first_seconds) << " s and "
           << std::lround(e.second_seconds) << " s; summaries " << (e.summary_a == e.summary_b ? "identical" : "differ");
  return v;
}

Verdict leakage_audit() {
  Verdict v;
  auto& e = end_to_end();
  if (!e.error.empty()) {
    v.require(false, e.error);
    return v;
  }
  const json folds = json::parse(ice::testing::slurp(e.cfg.output_dir / "folds.json"));
  int cells = 0;
  std::int64_t samples = 0, augment_calls = 0;
  for (const auto& f : folds) {
    const int r = f["fold"].get<int>();
    const std::set<std::string> train(f["train"].begin(), f["train"].end());
    for (ViewLabel view : e.cfg.views) {
      const fs::path cj = cell_dir(e.cfg.output_dir, r, view) / "cell.json";
      if (!fs::exists(cj)) {
        v.require(false, "missing " + cj.string());
        continue;
      }
      const json leak = json::parse(ice::testing::slurp(cj))["leakage"];
      ++cells;
      for (const auto& id : leak["optimizer_patients"])
        v.require(train.count(id.get<std::string>()) == 1, "optimizer saw " + id.get<std::string>());
      for (const auto& id : leak["augmented_patients"])
        v.require(train.count(id.get<std::string>()) == 1, "augmenter saw " + id.get<std::string>());
      v.require(leak["foreign_augment_calls"] == 0, "augmentation outside the training split");
      v.require(leak["optimizer_samples"].get<std::int64_t>() > 0, "optimizer received samples");
      v.require(leak["clean"] == true, "cell audit clean");
      samples += leak["optimizer_samples"].get<std::int64_t>();
      augment_calls += leak["augment_calls"].get<std::int64_t>();
    }
  }
  v.require(cells == 12, "12 audited cells");
  v.detail << cells << " cells, " << samples << " optimizer samples, " << augment_calls
           << " augmentation calls, all within training splits";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    std::function<Verdict()> check;
    double budget_seconds;  // 0: enforced inside the check, or none
  };
  const std::vector<Criterion> criteria = {
      {"table aggregation fixtures", table_means, 1},
      {"fold engine", fold_engine, 1},
      {"preprocessing contract", preprocessing_contract, 0},
      {"augmentation properties", augmentation_properties, 30},
      {"vote oracle equivalence", vote_oracle, 10},
      {"model numerics", model_numerics, 300},
      {"stopping rules", stopping_rules, 1},
      {"end-to-end synthetic run", synthetic_run, 0},
      {"grad-cam properties", gradcam_properties, 60},
      {"leakage audit", leakage_audit, 0}};

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(n)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].check();
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (criteria[i].budget_seconds > 0) v.require(secs < criteria[i].budget_seconds, "time budget");
    failures += v.pass ? 0 : 1;
    std::cout << "criterion " << std::setw(2) << n << ": " << (v.pass ? "PASS" : "FAIL") << "  " << criteria[i].name
              << " (" << std::fixed << std::setprecision(1) << secs << " s) " << v.detail.str() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
