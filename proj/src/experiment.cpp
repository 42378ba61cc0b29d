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

#include "ice/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ice/checkpoint.hpp"
#include "ice/folds.hpp"
#include "ice/gradcam.hpp"
#include "ice/rng.hpp"

namespace ice {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// JSON helpers

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

/// Rejects keys that `reference` (a fully populated default document) does not have.
void reject_unknown_like(const json& j, const json& reference, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!reference.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json synth_to_json(const SyntheticSource& s) {
  return {{"patients", s.patients},
          {"seed", s.seed},
          {"rows", s.synth.rows},
          {"cols", s.synth.cols},
          {"min_beats", s.synth.min_beats},
          {"max_beats", s.synth.max_beats},
          {"min_beat_frames", s.synth.min_beat_frames},
          {"max_beat_frames", s.synth.max_beat_frames},
          {"speckle_sigma", s.synth.speckle_sigma},
          {"phase_jitter", s.synth.phase_jitter},
          {"dir", s.dir.string()}};
}

SyntheticSource synth_from_json(const json& j, const fs::path& base) {
  const std::string w = "corpus.synthetic";
  reject_unknown(j, {"patients", "seed", "rows", "cols", "min_beats", "max_beats",
                     "min_beat_frames", "max_beat_frames", "speckle_sigma", "phase_jitter", "dir"},
                 w);
  SyntheticSource s;
  read(j, "patients", s.patients, w);
  read(j, "seed", s.seed, w);
  read(j, "rows", s.synth.rows, w);
  read(j, "cols", s.synth.cols, w);
  read(j, "min_beats", s.synth.min_beats, w);
  read(j, "max_beats", s.synth.max_beats, w);
  read(j, "min_beat_frames", s.synth.min_beat_frames, w);
  read(j, "max_beat_frames", s.synth.max_beat_frames, w);
  read(j, "speckle_sigma", s.synth.speckle_sigma, w);
  read(j, "phase_jitter", s.synth.phase_jitter, w);
  std::string dir;
  read(j, "dir", dir, w);
  if (!dir.empty()) s.dir = fs::path(dir).is_absolute() ? fs::path(dir) : base / dir;
  return s;
}

json preprocess_to_json(const PreprocessConfig& p) {
  json j = {{"target_frames", p.target_frames},
            {"crop_rows", p.crop_rows},
            {"crop_cols", p.crop_cols},
            {"crop_origin", nullptr},
            {"resize_factor", {p.resize_factor.num, p.resize_factor.den}},
            {"mask_variance_threshold", p.mask_variance_threshold}};
  if (p.crop_origin) j["crop_origin"] = {p.crop_origin->first, p.crop_origin->second};
  return j;
}

PreprocessConfig preprocess_from_json(const json& j) {
  const std::string w = "preprocess";
  reject_unknown(j, {"target_frames", "crop_rows", "crop_cols", "crop_origin", "resize_factor",
                     "mask_variance_threshold"},
                 w);
  PreprocessConfig p;
  read(j, "target_frames", p.target_frames, w);
  read(j, "crop_rows", p.crop_rows, w);
  read(j, "crop_cols", p.crop_cols, w);
  read(j, "mask_variance_threshold", p.mask_variance_threshold, w);
  if (j.contains("crop_origin") && !j["crop_origin"].is_null()) {
    std::array<std::int64_t, 2> o{};
    read(j, "crop_origin", o, w);
    p.crop_origin = std::pair{o[0], o[1]};
  }
  if (j.contains("resize_factor")) {
    std::array<std::int64_t, 2> f{};
    read(j, "resize_factor", f, w);
    p.resize_factor = {f[0], f[1]};
  }
  return p;
}

json augment_to_json(const AugmentConfig& a) {
  return {{"variants", a.variants},
          {"brightness_range", {a.brightness_range.first, a.brightness_range.second}},
          {"contrast_range", {a.contrast_range.first, a.contrast_range.second}},
          {"frame_drop_prob", a.frame_drop_prob},
          {"noise_sigma", a.noise_sigma},
          {"target_frames", a.target_frames},
          {"seed", a.seed}};
}

AugmentConfig augment_from_json(const json& j) {
  const std::string w = "augment";
  reject_unknown(j, {"variants", "brightness_range", "contrast_range", "frame_drop_prob",
                     "noise_sigma", "target_frames", "seed"},
                 w);
  AugmentConfig a;
  read(j, "variants", a.variants, w);
  read(j, "brightness_range", a.brightness_range, w);
  read(j, "contrast_range", a.contrast_range, w);
  read(j, "frame_drop_prob", a.frame_drop_prob, w);
  read(j, "noise_sigma", a.noise_sigma, w);
  read(j, "target_frames", a.target_frames, w);
  read(j, "seed", a.seed, w);
  return a;
}

std::string tie_break_name(TieBreak t) {
  return t == TieBreak::LowestId ? "lowest_id" : "mean_confidence";
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

std::optional<json> read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

std::string patient_of_key(std::string_view key) {
  return std::string(key.substr(0, key.find('/')));
}

json set_to_json(const std::set<std::string>& s) { return json(std::vector<std::string>(s.begin(), s.end())); }

std::vector<FoldSpec> experiment_folds(const ExperimentConfig& cfg, const DatasetManifest& m) {
  try {
    return make_folds(m.ordering, cfg.n_folds, cfg.window);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("folds: ") + e.what());
  }
}

TrainConfig cell_train_config(const ExperimentConfig& cfg, int fold, ViewLabel view) {
  TrainConfig t = cfg.train;
  t.seed = derive_seed({cfg.train.seed, static_cast<std::uint64_t>(fold),
                        static_cast<std::uint64_t>(view)});
  return t;
}

/// Identifies everything a cell's result depends on.
std::string cell_fingerprint(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                             const FoldSpec& fold, ViewLabel view) {
  const json j = {{"preprocess", preprocess_to_json(cfg.preprocess)},
                  {"augment", augment_to_json(cfg.augment)},
                  {"model", to_json(cfg.model)},
                  {"train", to_json(cell_train_config(cfg, fold.fold_index, view))},
                  {"train_ids", fold.train_ids},
                  {"val_ids", fold.val_ids},
                  {"test_ids", fold.test_ids},
                  {"view", to_string(view)},
                  {"manifest", serialize_manifest(manifest)}};
  return hex64(fnv1a(j.dump()));
}

std::vector<Sample> pick(std::span<const Sample> samples, ViewLabel view,
                         const std::vector<std::string>& ids) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (s.view == view && wanted.count(s.patient_id)) out.push_back(s);
  }
  return out;
}

std::vector<SamplePrediction> predict_splits(IceNet& model, std::span<const Sample> samples,
                                             const FoldSpec& fold, ViewLabel view, int batch) {
  std::vector<SamplePrediction> preds;
  for (const auto& [split, ids] : {std::pair{"val", &fold.val_ids}, std::pair{"test", &fold.test_ids}}) {
    const auto subset = pick(samples, view, *ids);
    auto p = predict(model, subset, split, batch);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  return preds;
}

void log_line(const std::string& msg) { std::cerr << "[ice] " << msg << std::endl; }

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate(bool check_paths) const {
  try {
    preprocess.validate();
    augment.validate();
    model.validate();
    train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (augment.target_frames != preprocess.target_frames) {
    throw ConfigError("augment.target_frames must equal preprocess.target_frames");
  }
  if (n_folds < 1) throw ConfigError("folds.n_folds must be at least 1");
  if (window < 1) throw ConfigError("folds.window must be at least 1");
  for (int f : folds) {
    if (f < 0 || f >= n_folds) {
      throw ConfigError("folds.run: fold " + std::to_string(f) + " outside [0, " +
                        std::to_string(n_folds) + ")");
    }
  }
  if (views.empty()) throw ConfigError("views: at least one view is required");
  if (std::set<ViewLabel>(views.begin(), views.end()).size() != views.size()) {
    throw ConfigError("views: duplicate view");
  }
  if (gradcam_clips < 0) throw ConfigError("gradcam.clips must be non-negative");
  {
    // Layer names do not depend on width, so the narrowest model is enough to list them.
    ModelConfig probe;
    probe.backbone = Backbone::Reduced;
    probe.width_divisor = 64;
    const auto names = IceNetImpl(probe).conv_layer_names();
    if (std::find(names.begin(), names.end(), gradcam_layer) == names.end()) {
      throw ConfigError("gradcam.layer: '" + gradcam_layer + "' is not a volumetric convolution");
    }
  }
  if (output_dir.empty()) throw ConfigError("output_dir is required");
  if (synthetic) {
    if (synthetic->patients < 1) throw ConfigError("corpus.synthetic.patients must be positive");
  } else {
    if (manifest.empty()) throw ConfigError("corpus: a manifest path or a synthetic spec is required");
    if (check_paths && !fs::exists(manifest)) {
      throw ConfigError("corpus.manifest: " + manifest.string() + " does not exist");
    }
  }
}

std::vector<int> ExperimentConfig::selected_folds() const {
  if (!folds.empty()) return folds;
  std::vector<int> all(static_cast<std::size_t>(n_folds));
  for (int i = 0; i < n_folds; ++i) all[static_cast<std::size_t>(i)] = i;
  return all;
}

ExperimentConfig experiment_config_from_json(const json& j, const fs::path& base_dir) {
  reject_unknown(j, {"corpus", "preprocess", "augment", "folds", "model", "train", "views",
                     "output_dir", "tie_break", "gradcam"},
                 "config");
  ExperimentConfig cfg;
  auto resolve = [&](const std::string& p) {
    return fs::path(p).is_absolute() || base_dir.empty() ? fs::path(p) : base_dir / p;
  };

  std::string out = "out";
  read(j, "output_dir", out, "config");
  cfg.output_dir = resolve(out);

  if (!j.contains("corpus")) throw ConfigError("config: 'corpus' is required");
  const json& corpus = j["corpus"];
  reject_unknown(corpus, {"manifest", "synthetic"}, "corpus");
  if (corpus.contains("synthetic") == corpus.contains("manifest")) {
    throw ConfigError("corpus: exactly one of 'manifest' or 'synthetic' is required");
  }
  if (corpus.contains("manifest")) {
    std::string m;
    read(corpus, "manifest", m, "corpus");
    cfg.manifest = resolve(m);
  } else {
    cfg.synthetic = synth_from_json(corpus["synthetic"], base_dir);
    if (cfg.synthetic->dir.empty()) cfg.synthetic->dir = cfg.output_dir / "corpus";
    cfg.manifest = cfg.synthetic->dir / "manifest.json";
  }

  if (j.contains("preprocess")) cfg.preprocess = preprocess_from_json(j["preprocess"]);
  if (j.contains("augment")) cfg.augment = augment_from_json(j["augment"]);
  if (j.contains("folds")) {
    reject_unknown(j["folds"], {"n_folds", "window", "run"}, "folds");
    read(j["folds"], "n_folds", cfg.n_folds, "folds");
    read(j["folds"], "window", cfg.window, "folds");
    read(j["folds"], "run", cfg.folds, "folds");
  }
  try {
    if (j.contains("model")) {
      reject_unknown_like(j["model"], to_json(ModelConfig{}), "model");
      cfg.model = model_config_from_json(j["model"]);
    }
    if (j.contains("train")) {
      reject_unknown_like(j["train"], to_json(TrainConfig{}), "train");
      cfg.train = train_config_from_json(j["train"]);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (!cfg.model.pretrained_weights_path.empty()) {
    cfg.model.pretrained_weights_path = resolve(cfg.model.pretrained_weights_path).string();
  }
  if (j.contains("views")) {
    std::vector<std::string> names;
    read(j, "views", names, "config");
    cfg.views.clear();
    for (const auto& n : names) {
      const auto v = parse_view(n);
      if (!v) throw ConfigError("views: unknown view '" + n + "'");
      cfg.views.push_back(*v);
    }
  }
  if (j.contains("tie_break")) {
    std::string t;
    read(j, "tie_break", t, "config");
    if (t == "lowest_id") {
      cfg.tie_break = TieBreak::LowestId;
    } else if (t == "mean_confidence") {
      cfg.tie_break = TieBreak::MeanConfidence;
    } else {
      throw ConfigError("tie_break: expected 'lowest_id' or 'mean_confidence'");
    }
  }
  if (j.contains("gradcam")) {
    reject_unknown(j["gradcam"], {"clips", "layer"}, "gradcam");
    read(j["gradcam"], "clips", cfg.gradcam_clips, "gradcam");
    read(j["gradcam"], "layer", cfg.gradcam_layer, "gradcam");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

json to_json(const ExperimentConfig& cfg) {
  json corpus;
  if (cfg.synthetic) {
    corpus["synthetic"] = synth_to_json(*cfg.synthetic);
  } else {
    corpus["manifest"] = cfg.manifest.string();
  }
  std::vector<std::string> views;
  for (auto v : cfg.views) views.emplace_back(to_string(v));
  return {{"corpus", corpus},
          {"preprocess", preprocess_to_json(cfg.preprocess)},
          {"augment", augment_to_json(cfg.augment)},
          {"folds", {{"n_folds", cfg.n_folds}, {"window", cfg.window}, {"run", cfg.selected_folds()}}},
          {"model", to_json(cfg.model)},
          {"train", to_json(cfg.train)},
          {"views", views},
          {"output_dir", cfg.output_dir.string()},
          {"tie_break", tie_break_name(cfg.tie_break)},
          {"gradcam", {{"clips", cfg.gradcam_clips}, {"layer", cfg.gradcam_layer}}}};
}

// ---------------------------------------------------------------------------
// Data

DatasetManifest prepare_corpus(const ExperimentConfig& cfg) {
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    json params = synth_to_json(s);
    params.erase("dir");
    const fs::path stamp = s.dir / "synthetic.json";
    const auto existing = read_json_file(stamp);
    if (!existing || *existing != params || !fs::exists(s.dir / "manifest.json")) {
      log_line("generating synthetic corpus of " + std::to_string(s.patients) + " patients in " +
               s.dir.string());
      generate_synthetic(s.patients, s.seed, s.synth, s.dir);
      write_text(stamp, params.dump(2) + "\n");
    }
  }
  DatasetManifest m;
  try {
    m = parse_manifest(cfg.manifest);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const auto problems = validate_manifest(m);
  if (!problems.empty()) {
    std::string msg = "manifest " + cfg.manifest.string() + " is invalid:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return m;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, const PreprocessConfig& cfg,
                                 std::span<const ViewLabel> views) {
  std::vector<Sample> out;
  for (const auto& patient : manifest.patients) {
    for (const auto& clip : patient.clips) {
      if (std::find(views.begin(), views.end(), clip.view) == views.end()) continue;
      const RawVideo raw = load_raw_clip(manifest, clip);
      auto beats = preprocess_pipeline(raw, clip.beats, cfg);
      for (std::size_t b = 0; b < beats.size(); ++b) {
        Sample s;
        s.patient_id = patient.patient_id;
        s.clip_id = clip.clip_id;
        s.view = clip.view;
        s.pacing = clip.pacing;
        s.beat_index = static_cast<int>(b);
        s.video = std::move(beats[b]);
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

fs::path cell_dir(const fs::path& out, int fold, ViewLabel view) {
  return out / ("fold_" + std::to_string(fold)) / ("view_" + std::string(to_string(view)));
}

bool LeakageAudit::clean() const {
  const bool augmented_ok = std::includes(expected_patients.begin(), expected_patients.end(),
                                          augmented_patients.begin(), augmented_patients.end());
  return optimizer_patients == expected_patients && augmented_ok && foreign_augment_calls == 0;
}

// ---------------------------------------------------------------------------
// Cells

CellOutcome run_cell(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                     std::span<const Sample> samples, int fold_index, ViewLabel view) {
  const auto folds = experiment_folds(cfg, manifest);
  const FoldSpec& fold = folds.at(static_cast<std::size_t>(fold_index));
  const fs::path dir = cell_dir(cfg.output_dir, fold_index, view);
  const std::string fingerprint = cell_fingerprint(cfg, manifest, fold, view);

  CellOutcome outcome;
  outcome.fold = fold_index;
  outcome.view = view;

  if (auto prev = read_json_file(dir / "cell.json");
      prev && prev->value("status", "") == "complete" && prev->value("fingerprint", "") == fingerprint &&
      fs::exists(dir / "preds.jsonl") && fs::exists(dir / "checkpoint.bin")) {
    outcome.status = "complete";
    outcome.info = *prev;
    return outcome;
  }

  const TrainConfig tcfg = cell_train_config(cfg, fold_index, view);

  LeakageAudit audit;
  const std::set<std::string> train_ids(fold.train_ids.begin(), fold.train_ids.end());
  std::set<std::string> train_keys;
  for (const auto& s : samples) {
    if (s.view != view) continue;
    if (train_ids.count(s.patient_id)) {
      audit.expected_patients.insert(s.patient_id);
      train_keys.insert(s.key());
    }
  }

  DataAudit data_audit;
  TrainResult result;
  {
    AugmentObserverScope observe([&](std::string_view key) {
      ++audit.augment_calls;
      audit.augmented_patients.insert(patient_of_key(key));
      if (!train_keys.count(std::string(key))) ++audit.foreign_augment_calls;
    });
    result = train_fold_view(fold, view, samples, cfg.model, tcfg, cfg.augment, &data_audit);
  }
  audit.optimizer_patients = data_audit.optimizer_patients;
  audit.optimizer_samples = data_audit.optimizer_samples;

  const auto preds = predict_splits(result.model, samples, fold, view, tcfg.batch_size);

  fs::create_directories(dir);
  save_checkpoint(dir / "checkpoint.bin", result.model, result.meta);
  write_text(dir / "epochs.csv", epochs_to_csv(result.history));
  write_predictions(dir / "preds.jsonl", preds);

  json info = {{"fold", fold_index},
               {"view", to_string(view)},
               {"status", "complete"},
               {"fingerprint", fingerprint},
               {"seed", tcfg.seed},
               {"epochs_run", result.state.epoch},
               {"best_epoch", result.state.best_epoch},
               {"best_val_sample_accuracy", result.state.best_val_acc},
               {"stop_reason", to_string(result.state.stop_reason)},
               {"train_patients", fold.train_ids},
               {"leakage",
                {{"optimizer_patients", set_to_json(audit.optimizer_patients)},
                 {"augmented_patients", set_to_json(audit.augmented_patients)},
                 {"expected_patients", set_to_json(audit.expected_patients)},
                 {"optimizer_samples", audit.optimizer_samples},
                 {"augment_calls", audit.augment_calls},
                 {"foreign_augment_calls", audit.foreign_augment_calls},
                 {"clean", audit.clean()}}}};
  write_text(dir / "cell.json", info.dump(2) + "\n");

  if (cfg.gradcam_clips > 0) {
    export_cell_gradcam(cfg, manifest, samples, fold_index, view, cfg.gradcam_clips);
  }

  outcome.status = "complete";
  outcome.trained = true;
  outcome.info = std::move(info);
  return outcome;
}

void evaluate_cell(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                   std::span<const Sample> samples, int fold_index, ViewLabel view) {
  const auto folds = experiment_folds(cfg, manifest);
  const FoldSpec& fold = folds.at(static_cast<std::size_t>(fold_index));
  const fs::path dir = cell_dir(cfg.output_dir, fold_index, view);
  auto [model, meta] = load_checkpoint(dir / "checkpoint.bin", &cfg.model);
  write_predictions(dir / "preds.jsonl",
                    predict_splits(model, samples, fold, view, cfg.train.batch_size));
}

std::vector<fs::path> export_cell_gradcam(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                                          std::span<const Sample> samples, int fold_index,
                                          ViewLabel view, int max_clips) {
  const auto folds = experiment_folds(cfg, manifest);
  const FoldSpec& fold = folds.at(static_cast<std::size_t>(fold_index));
  const fs::path dir = cell_dir(cfg.output_dir, fold_index, view);
  auto [model, meta] = load_checkpoint(dir / "checkpoint.bin", &cfg.model);
  model->eval();

  // First beat of each test clip, in manifest order.
  std::vector<const Sample*> chosen;
  std::set<std::string> seen;
  const auto test = std::set<std::string>(fold.test_ids.begin(), fold.test_ids.end());
  for (const auto& s : samples) {
    if (s.view != view || !test.count(s.patient_id) || seen.count(s.clip_id)) continue;
    seen.insert(s.clip_id);
    chosen.push_back(&s);
    if (static_cast<int>(chosen.size()) >= max_clips) break;
  }

  std::vector<fs::path> written;
  for (const Sample* s : chosen) {
    const auto pred = predict(model, std::span<const Sample>(s, 1), "test", 1).front();
    const int target = static_cast<int>(pred.predicted_pacing);
    const Heatmap hm = compute_gradcam(*model, s->video, target, cfg.gradcam_layer);
    OverlayMeta om{s->patient_id, s->clip_id, s->pacing, pred.predicted_pacing};
    written.push_back(export_overlay(s->video, hm, om, dir / "gradcam"));
  }
  return written;
}

// ---------------------------------------------------------------------------
// Reports

ReportTables report(const fs::path& experiment_dir, TieBreak tie) {
  if (!fs::is_directory(experiment_dir)) {
    throw std::runtime_error("experiment directory " + experiment_dir.string() + " does not exist");
  }
  std::map<int, std::vector<SamplePrediction>> by_fold;
  for (const auto& fold_entry : fs::directory_iterator(experiment_dir)) {
    const std::string name = fold_entry.path().filename().string();
    if (!fold_entry.is_directory() || name.rfind("fold_", 0) != 0) continue;
    int fold = 0;
    try {
      std::size_t used = 0;
      fold = std::stoi(name.substr(5), &used);
      if (used != name.size() - 5) continue;
    } catch (const std::exception&) {
      continue;
    }
    std::vector<fs::path> files;
    for (const auto& view_entry : fs::directory_iterator(fold_entry.path())) {
      const fs::path preds = view_entry.path() / "preds.jsonl";
      if (view_entry.is_directory() && fs::exists(preds)) files.push_back(preds);
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto p = read_predictions(f);
      auto& dst = by_fold[fold];
      dst.insert(dst.end(), p.begin(), p.end());
    }
  }
  if (by_fold.empty()) {
    throw std::runtime_error("no predictions found under " + experiment_dir.string());
  }
  ReportTables t;
  for (const auto& [fold, preds] : by_fold) {
    std::vector<SamplePrediction> val, test;
    for (const auto& p : preds) (p.split == "test" ? test : val).push_back(p);
    t.val.push_back(fold_report(fold, val, tie));
    t.test.push_back(fold_report(fold, test, tie));
  }
  t.val_csv = render_table_csv(t.val);
  t.test_csv = render_table_csv(t.test);
  return t;
}

namespace {

json report_to_json(std::span<const FoldReport> reports) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json folds = json::array();
  for (const auto& r : reports) {
    json row = {{"fold", r.fold_index}};
    for (std::size_t v = 0; v < 4; ++v) {
      row[std::string(to_string(kAllViews[v]))] = opt(r.view_accuracy[v]);
    }
    row["cross_view"] = opt(r.cross_view_accuracy);
    row["fused_units"] = r.fused_units;
    row["fused_correct"] = r.fused_correct;
    row["samples"] = r.samples;
    row["samples_correct"] = r.samples_correct;
    folds.push_back(row);
  }
  json mean = nullptr;
  if (!reports.empty()) {
    const MeanRow m = aggregate_means(reports);
    mean = json::object();
    for (std::size_t v = 0; v < 4; ++v) mean[std::string(to_string(kAllViews[v]))] = opt(m.view_accuracy[v]);
    mean["cross_view"] = opt(m.cross_view_accuracy);
  }
  return {{"folds", folds}, {"mean", mean}};
}

}  // namespace

json write_summary(const ExperimentConfig& cfg) {
  json cells = json::array();
  bool complete = true, clean = true;
  for (int fold : cfg.selected_folds()) {
    for (ViewLabel view : cfg.views) {
      const auto info = read_json_file(cell_dir(cfg.output_dir, fold, view) / "cell.json");
      json cell = {{"fold", fold}, {"view", to_string(view)}};
      if (!info) {
        cell["status"] = "missing";
        complete = false;
      } else {
        for (const char* key : {"status", "error", "epochs_run", "best_epoch",
                                "best_val_sample_accuracy", "stop_reason", "leakage"}) {
          if (info->contains(key)) cell[key] = (*info)[key];
        }
        if (cell.value("status", "") != "complete") complete = false;
        if (info->contains("leakage") && !(*info)["leakage"].value("clean", false)) clean = false;
      }
      cells.push_back(cell);
    }
  }

  ReportTables tables;
  bool have_tables = true;
  try {
    tables = report(cfg.output_dir, cfg.tie_break);
  } catch (const std::exception&) {
    have_tables = false;
  }
  const fs::path sdir = cfg.output_dir / "summary";
  if (have_tables) {
    write_text(sdir / "val_table.csv", tables.val_csv);
    write_text(sdir / "test_table.csv", tables.test_csv);
  }
  json summary = {{"complete", complete},
                  {"leakage_clean", clean},
                  {"cells", cells},
                  {"validation", have_tables ? report_to_json(tables.val) : json(nullptr)},
                  {"test", have_tables ? report_to_json(tables.test) : json(nullptr)}};
  write_text(sdir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate(/*check_paths=*/!cfg.synthetic.has_value());
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "config.json", to_json(cfg).dump(2) + "\n");

  configure_determinism(cfg.train.deterministic);
  const DatasetManifest manifest = prepare_corpus(cfg);
  const auto folds = experiment_folds(cfg, manifest);
  write_text(cfg.output_dir / "folds.json", folds_to_json(folds));

  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = load_samples(manifest, cfg.preprocess, cfg.views);
  log_line("loaded " + std::to_string(samples.size()) + " heartbeat samples in " +
           std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
           " s");

  ExperimentResult result;
  for (int fold : cfg.selected_folds()) {
    for (ViewLabel view : cfg.views) {
      const auto c0 = std::chrono::steady_clock::now();
      CellOutcome outcome;
      try {
        outcome = run_cell(cfg, manifest, samples, fold, view);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        outcome.fold = fold;
        outcome.view = view;
        outcome.status = "failed";
        outcome.error = e.what();
        outcome.info = {{"fold", fold}, {"view", to_string(view)}, {"status", "failed"},
                        {"error", e.what()}};
        write_text(cell_dir(cfg.output_dir, fold, view) / "cell.json", outcome.info.dump(2) + "\n");
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count();
      std::ostringstream msg;
      msg << "fold " << fold << " view " << to_string(view) << ": " << outcome.status
          << (outcome.trained ? "" : outcome.status == "complete" ? " (reused)" : "");
      if (outcome.info.contains("epochs_run")) msg << ", epochs " << outcome.info["epochs_run"];
      if (!outcome.error.empty()) msg << ", " << outcome.error;
      msg << ", " << secs << " s";
      log_line(msg.str());
      result.cells.push_back(std::move(outcome));
    }
  }

  result.summary = write_summary(cfg);
  try {
    const auto tables = report(cfg.output_dir, cfg.tie_break);
    result.val_reports = tables.val;
    result.test_reports = tables.test;
  } catch (const std::exception&) {
  }
  return result;
}

}  // namespace ice
