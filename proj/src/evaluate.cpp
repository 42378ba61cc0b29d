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

#include "ice/evaluate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ice {

using nlohmann::json;

double accuracy(std::span<const PacingClass> predicted, std::span<const PacingClass> truth) {
  if (predicted.empty() || predicted.size() != truth.size()) {
    throw std::invalid_argument("accuracy: inputs must be non-empty and of equal length");
  }
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return accuracy(correct, static_cast<std::int64_t>(predicted.size()));
}

double accuracy(std::int64_t correct, std::int64_t total) {
  if (total <= 0 || correct < 0 || correct > total) {
    throw std::invalid_argument("accuracy: need 0 <= correct <= total and total > 0");
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double round_half_up(double x, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // The 1e-9 nudge keeps values such as 54.725 (stored as 54.72499...) on the upper side.
  return std::floor(x * scale + 0.5 + 1e-9) / scale;
}

PacingClass majority_vote(std::span<const PacingClass> votes) {
  if (votes.empty()) throw std::invalid_argument("majority_vote: no votes");
  std::array<int, kNumPacingClasses> counts{};
  for (auto v : votes) ++counts[static_cast<std::size_t>(v)];
  int best = 0;
  for (int k = 1; k < kNumPacingClasses; ++k)
    if (counts[k] > counts[best]) best = k;
  return static_cast<PacingClass>(best);
}

PacingClass clip_vote(std::span<const SamplePrediction> samples, TieBreak tie) {
  if (samples.empty()) throw std::invalid_argument("clip_vote: no samples");
  std::array<int, kNumPacingClasses> counts{};
  std::array<double, kNumPacingClasses> confidence{};
  bool have_probs = true;
  for (const auto& s : samples) {
    if (s.clip_id != samples.front().clip_id) {
      throw std::invalid_argument("clip_vote: samples from clips '" + samples.front().clip_id +
                                  "' and '" + s.clip_id + "'");
    }
    ++counts[static_cast<std::size_t>(s.predicted_pacing)];
    if (s.probs) {
      for (int k = 0; k < kNumPacingClasses; ++k) confidence[k] += (*s.probs)[k];
    } else {
      have_probs = false;
    }
  }
  int best = 0;
  for (int k = 1; k < kNumPacingClasses; ++k) {
    if (counts[k] > counts[best]) {
      best = k;
    } else if (counts[k] == counts[best] && tie == TieBreak::MeanConfidence && have_probs &&
               confidence[k] > confidence[best]) {
      best = k;
    }
  }
  return static_cast<PacingClass>(best);
}

PacingClass cross_view_vote(const std::map<ViewLabel, PacingClass>& clip_predictions) {
  if (clip_predictions.empty()) throw std::invalid_argument("cross_view_vote: no views");
  std::vector<PacingClass> votes;
  for (const auto& [view, p] : clip_predictions) votes.push_back(p);
  return majority_vote(votes);
}

std::vector<ClipDecision> clip_decisions(std::span<const SamplePrediction> samples, TieBreak tie) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<SamplePrediction>> by_clip;
  for (const auto& s : samples) {
    auto [it, inserted] = by_clip.try_emplace(s.clip_id);
    if (inserted) order.push_back(s.clip_id);
    it->second.push_back(s);
  }
  std::vector<ClipDecision> out;
  for (const auto& id : order) {
    const auto& group = by_clip.at(id);
    ClipDecision d;
    d.patient_id = group.front().patient_id;
    d.clip_id = id;
    d.view = group.front().view;
    d.true_pacing = group.front().true_pacing;
    d.predicted = clip_vote(group, tie);
    d.n_samples = static_cast<int>(group.size());
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<FusedDecision> fuse_views(std::span<const ClipDecision> clips) {
  using Key = std::pair<std::string, PacingClass>;
  std::vector<Key> order;
  std::map<Key, std::vector<const ClipDecision*>> units;
  for (const auto& c : clips) {
    Key key{c.patient_id, c.true_pacing};
    auto [it, inserted] = units.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&c);
  }
  std::vector<FusedDecision> out;
  for (const auto& key : order) {
    std::vector<PacingClass> votes;
    FusedDecision f;
    f.patient_id = key.first;
    f.true_pacing = key.second;
    for (const auto* c : units.at(key)) {
      votes.push_back(c->predicted);
      f.views.push_back(c->view);
    }
    f.predicted = majority_vote(votes);
    out.push_back(std::move(f));
  }
  return out;
}

FoldReport fold_report(int fold_index, std::span<const SamplePrediction> samples, TieBreak tie) {
  FoldReport r;
  r.fold_index = fold_index;
  for (const auto& s : samples) {
    ++r.samples;
    r.samples_correct += s.predicted_pacing == s.true_pacing ? 1 : 0;
  }
  const auto clips = clip_decisions(samples, tie);
  for (const auto& c : clips) {
    const auto v = static_cast<std::size_t>(c.view);
    ++r.view_clips[v];
    r.view_correct[v] += c.predicted == c.true_pacing ? 1 : 0;
  }
  for (std::size_t v = 0; v < 4; ++v) {
    if (r.view_clips[v] > 0) r.view_accuracy[v] = accuracy(r.view_correct[v], r.view_clips[v]);
  }
  for (const auto& f : fuse_views(clips)) {
    ++r.fused_units;
    r.fused_correct += f.predicted == f.true_pacing ? 1 : 0;
  }
  if (r.fused_units > 0) r.cross_view_accuracy = accuracy(r.fused_correct, r.fused_units);
  return r;
}

MeanRow aggregate_means(std::span<const FoldReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate_means: no reports");
  auto mean_of = [&](auto get) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : reports) {
      if (auto v = get(r)) {
        sum += *v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return round_half_up(sum / n, 2);
  };
  MeanRow m;
  for (std::size_t v = 0; v < 4; ++v) {
    m.view_accuracy[v] = mean_of([v](const FoldReport& r) { return r.view_accuracy[v]; });
  }
  m.cross_view_accuracy = mean_of([](const FoldReport& r) { return r.cross_view_accuracy; });
  return m;
}

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", round_half_up(*v, 2));
  return buf;
}

}  // namespace

std::string render_table_csv(std::span<const FoldReport> reports) {
  std::ostringstream out;
  out << "Fold,TV,MV,LPV,CT,Cross-View\n";
  for (const auto& r : reports) {
    out << r.fold_index + 1;
    for (const auto& v : r.view_accuracy) out << ',' << cell(v);
    out << ',' << cell(r.cross_view_accuracy) << '\n';
  }
  if (!reports.empty()) {
    const MeanRow m = aggregate_means(reports);
    out << "Mean";
    for (const auto& v : m.view_accuracy) out << ',' << cell(v);
    out << ',' << cell(m.cross_view_accuracy) << '\n';
  }
  return out.str();
}

std::string prediction_to_json(const SamplePrediction& p) {
  json j;
  j["patient_id"] = p.patient_id;
  j["clip_id"] = p.clip_id;
  j["view"] = to_string(p.view);
  j["true_pacing"] = to_string(p.true_pacing);
  j["predicted_pacing"] = to_string(p.predicted_pacing);
  j["beat_index"] = p.beat_index;
  if (!p.split.empty()) j["split"] = p.split;
  if (p.probs) j["probs"] = *p.probs;
  return j.dump();
}

SamplePrediction prediction_from_json(std::string_view line) {
  const json j = json::parse(line);
  SamplePrediction p;
  p.patient_id = j.at("patient_id").get<std::string>();
  p.clip_id = j.at("clip_id").get<std::string>();
  const auto view = parse_view(j.at("view").get<std::string>());
  const auto truth = parse_pacing(j.at("true_pacing").get<std::string>());
  const auto pred = parse_pacing(j.at("predicted_pacing").get<std::string>());
  if (!view || !truth || !pred) throw std::invalid_argument("prediction: bad label in " + std::string(line));
  p.view = *view;
  p.true_pacing = *truth;
  p.predicted_pacing = *pred;
  p.beat_index = j.value("beat_index", 0);
  p.split = j.value("split", std::string{});
  if (j.contains("probs")) p.probs = j.at("probs").get<std::array<double, 3>>();
  return p;
}

void write_predictions(const std::filesystem::path& path, std::span<const SamplePrediction> preds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : preds) out << prediction_to_json(p) << '\n';
}

std::vector<SamplePrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<SamplePrediction> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(prediction_from_json(line));
  }
  return out;
}

}  // namespace ice
