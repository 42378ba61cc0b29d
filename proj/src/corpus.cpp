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

#include "ice/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "ice/rng.hpp"
#include "json.hpp"

namespace ice {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(PacingClass p) {
  switch (p) {
    case PacingClass::NSR: return "NSR";
    case PacingClass::DIST: return "DIST";
    case PacingClass::PROX: return "PROX";
  }
  return "?";
}

std::string_view to_string(ViewLabel v) {
  switch (v) {
    case ViewLabel::TV: return "TV";
    case ViewLabel::MV: return "MV";
    case ViewLabel::LPV: return "LPV";
    case ViewLabel::CT: return "CT";
  }
  return "?";
}

std::optional<PacingClass> parse_pacing(std::string_view s) {
  for (auto p : kAllPacing)
    if (to_string(p) == s) return p;
  return std::nullopt;
}

std::optional<ViewLabel> parse_view(std::string_view s) {
  for (auto v : kAllViews)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

PacingClass pacing_from_id(int id) {
  if (id < 0 || id >= kNumPacingClasses) {
    throw std::out_of_range("pacing class id out of range: " + std::to_string(id));
  }
  return static_cast<PacingClass>(id);
}

std::int64_t PatientRecord::beat_count() const noexcept {
  std::int64_t n = 0;
  for (const auto& c : clips) n += static_cast<std::int64_t>(c.beats.size());
  return n;
}

const PatientRecord* DatasetManifest::find_patient(std::string_view id) const noexcept {
  for (const auto& p : patients)
    if (p.patient_id == id) return &p;
  return nullptr;
}

fs::path DatasetManifest::resolve(const ClipRecord& clip) const {
  fs::path store(clip.frame_store);
  if (store.is_absolute() || base_dir.empty()) return store;
  return base_dir / store;
}

// ---------------------------------------------------------------------------
// Manifest I/O

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ManifestParseError(where + "." + key + ": missing required field");
  }
  return obj.at(key);
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) throw ManifestParseError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

std::int64_t require_int(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer()) throw ManifestParseError(where + "." + key + ": expected an integer");
  return v.get<std::int64_t>();
}

const json& require_array(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_array()) throw ManifestParseError(where + "." + key + ": expected an array");
  return v;
}

}  // namespace

DatasetManifest parse_manifest_text(std::string_view text, fs::path base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ManifestParseError(std::string("manifest: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ManifestParseError("manifest: top level must be an object");

  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  const json& patients = require_array(doc, "patients", "manifest");

  std::unordered_set<std::string> patient_ids;
  std::unordered_set<std::string> clip_ids;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    const std::string pw = "patients[" + std::to_string(i) + "]";
    PatientRecord p;
    p.patient_id = require_string(patients[i], "id", pw);
    if (!patient_ids.insert(p.patient_id).second) {
      throw ManifestValidationError("duplicate patient id '" + p.patient_id + "'");
    }
    const json& clips = require_array(patients[i], "clips", pw);
    for (std::size_t j = 0; j < clips.size(); ++j) {
      const std::string cw = pw + ".clips[" + std::to_string(j) + "]";
      ClipRecord c;
      c.clip_id = require_string(clips[j], "clip_id", cw);
      if (!clip_ids.insert(c.clip_id).second) {
        throw ManifestValidationError("duplicate clip id '" + c.clip_id + "'");
      }
      const auto view = parse_view(require_string(clips[j], "view", cw));
      if (!view) throw ManifestParseError(cw + ".view: expected one of TV|MV|LPV|CT");
      c.view = *view;
      const auto pacing = parse_pacing(require_string(clips[j], "pacing", cw));
      if (!pacing) throw ManifestParseError(cw + ".pacing: expected one of NSR|DIST|PROX");
      c.pacing = *pacing;
      c.frame_store = require_string(clips[j], "frame_store", cw);
      c.frame_count = require_int(clips[j], "frame_count", cw);
      const json& beats = require_array(clips[j], "beats", cw);
      for (std::size_t k = 0; k < beats.size(); ++k) {
        const std::string bw = cw + ".beats[" + std::to_string(k) + "]";
        c.beats.push_back({require_int(beats[k], "start_frame", bw),
                           require_int(beats[k], "pr_frame", bw),
                           require_int(beats[k], "end_frame", bw)});
      }
      p.clips.push_back(std::move(c));
    }
    m.patients.push_back(std::move(p));
  }

  if (doc.contains("ordering")) {
    const json& ord = doc.at("ordering");
    if (!ord.is_array()) throw ManifestParseError("manifest.ordering: expected an array");
    for (std::size_t i = 0; i < ord.size(); ++i) {
      if (!ord[i].is_string()) {
        throw ManifestParseError("manifest.ordering[" + std::to_string(i) + "]: expected a string");
      }
      m.ordering.push_back(ord[i].get<std::string>());
    }
    std::vector<std::string> a = m.ordering, b(patient_ids.begin(), patient_ids.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) {
      throw ManifestValidationError("manifest.ordering must be a permutation of the patient ids");
    }
  } else {
    for (const auto& p : m.patients) m.ordering.push_back(p.patient_id);
  }
  return m;
}

DatasetManifest parse_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestParseError("manifest: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest_text(ss.str(), path.parent_path());
}

std::string serialize_manifest(const DatasetManifest& m) {
  json doc;
  doc["patients"] = json::array();
  for (const auto& p : m.patients) {
    json jp;
    jp["id"] = p.patient_id;
    jp["clips"] = json::array();
    for (const auto& c : p.clips) {
      json jc;
      jc["clip_id"] = c.clip_id;
      jc["view"] = to_string(c.view);
      jc["pacing"] = to_string(c.pacing);
      jc["frame_store"] = c.frame_store;
      jc["frame_count"] = c.frame_count;
      jc["beats"] = json::array();
      for (const auto& b : c.beats) {
        jc["beats"].push_back(
            {{"start_frame", b.start_frame}, {"pr_frame", b.pr_frame}, {"end_frame", b.end_frame}});
      }
      jp["clips"].push_back(std::move(jc));
    }
    doc["patients"].push_back(std::move(jp));
  }
  doc["ordering"] = m.ordering;
  return doc.dump(2) + "\n";
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << serialize_manifest(m);
}

std::vector<std::string> validate_manifest(const DatasetManifest& m, bool check_storage) {
  std::vector<std::string> issues;
  std::set<std::string> patient_ids, clip_ids;
  for (const auto& p : m.patients) {
    if (!patient_ids.insert(p.patient_id).second) {
      issues.push_back("duplicate patient id '" + p.patient_id + "'");
    }
    if (p.beat_count() <= 0) {
      issues.push_back("patient '" + p.patient_id + "' has no annotated beats");
    }
    for (const auto& c : p.clips) {
      if (!clip_ids.insert(c.clip_id).second) {
        issues.push_back("duplicate clip id '" + c.clip_id + "'");
      }
      std::int64_t prev_end = 0;
      for (std::size_t k = 0; k < c.beats.size(); ++k) {
        const auto& b = c.beats[k];
        const std::string tag = "clip '" + c.clip_id + "' beat " + std::to_string(k);
        if (b.start_frame < 0 || !(b.start_frame <= b.pr_frame && b.pr_frame < b.end_frame)) {
          issues.push_back(tag + ": requires 0 <= start_frame <= pr_frame < end_frame");
        } else if (b.end_frame > c.frame_count) {
          issues.push_back(tag + ": end_frame " + std::to_string(b.end_frame) +
                           " exceeds frame_count " + std::to_string(c.frame_count));
        }
        if (k > 0 && b.start_frame < prev_end) {
          issues.push_back(tag + ": overlaps or precedes the previous beat");
        }
        prev_end = std::max(prev_end, b.end_frame);
      }
      if (check_storage) {
        const fs::path store = m.resolve(c);
        std::error_code ec;
        if (!fs::is_directory(store, ec)) {
          issues.push_back("clip '" + c.clip_id + "': frame store " + store.string() + " missing");
          continue;
        }
        for (std::int64_t i = 0; i < c.frame_count; ++i) {
          if (!fs::is_regular_file(frame_path(store, i), ec)) {
            issues.push_back("clip '" + c.clip_id + "': frame " + std::to_string(i) + " missing");
            break;
          }
        }
      }
    }
  }
  std::vector<std::string> ord = m.ordering;
  std::sort(ord.begin(), ord.end());
  if (!std::equal(ord.begin(), ord.end(), patient_ids.begin(), patient_ids.end()) ||
      ord.size() != m.patients.size()) {
    issues.push_back("ordering is not a permutation of the patient ids");
  }
  return issues;
}

// ---------------------------------------------------------------------------
// Frame stores

fs::path frame_path(const fs::path& store, std::int64_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%05lld.png", static_cast<long long>(index));
  return store / name;
}

RawVideo load_raw_clip(const fs::path& store, std::int64_t frame_count) {
  if (frame_count <= 0) throw ClipLoadError("clip has no frames: " + store.string(), -1);
  RawVideo video;
  for (std::int64_t i = 0; i < frame_count; ++i) {
    const fs::path p = frame_path(store, i);
    cv::Mat img = cv::imread(p.string(), cv::IMREAD_GRAYSCALE);
    if (img.empty()) {
      throw ClipLoadError("frame " + std::to_string(i) + " missing or unreadable: " + p.string(), i);
    }
    if (i == 0) {
      video = RawVideo(frame_count, img.rows, img.cols);
    } else if (img.rows != video.rows() || img.cols != video.cols()) {
      throw ClipLoadError("frame " + std::to_string(i) + " has inconsistent size", i);
    }
    auto dst = video.frame(i);
    for (int r = 0; r < img.rows; ++r) {
      const auto* row = img.ptr<std::uint8_t>(r);
      std::copy(row, row + img.cols, dst.begin() + r * img.cols);
    }
  }
  return video;
}

RawVideo load_raw_clip(const DatasetManifest& m, const ClipRecord& clip) {
  return load_raw_clip(m.resolve(clip), clip.frame_count);
}

VideoTensor load_clip(const DatasetManifest& m, const ClipRecord& clip) {
  const RawVideo raw = load_raw_clip(m, clip);
  VideoTensor out(raw.frames(), raw.rows(), raw.cols());
  std::transform(raw.values().begin(), raw.values().end(), out.values().begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return out;
}

void write_frame_png(const fs::path& path, std::span<const std::uint8_t> pixels, std::int64_t rows,
                     std::int64_t cols) {
  const cv::Mat img(static_cast<int>(rows), static_cast<int>(cols), CV_8UC1,
                    const_cast<std::uint8_t*>(pixels.data()));
  if (!cv::imwrite(path.string(), img, {cv::IMWRITE_PNG_COMPRESSION, 1})) {
    throw std::runtime_error("cannot write frame " + path.string());
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

constexpr double kFanHalfAngle = 40.0 * std::numbers::pi / 180.0;

struct FanGeometry {
  double apex_row, apex_col, radius, inner;
};

FanGeometry fan_geometry(const SynthConfig& cfg) {
  const double rows = static_cast<double>(cfg.rows);
  return {0.04 * rows, 0.5 * static_cast<double>(cfg.cols), 0.9 * rows, 0.054 * rows};
}

// Cheap counter-based noise: an approximately normal deviate from four uniforms.
struct HashNoise {
  std::uint64_t state;
  double next() noexcept {
    double sum = 0.0;
    for (int i = 0; i < 2; ++i) {
      state = splitmix64(state);
      sum += static_cast<double>(state & 0xFFFFFFFFULL) + static_cast<double>(state >> 32);
    }
    // Irwin-Hall with n = 4, rescaled to unit variance.
    return (sum / 4294967296.0 - 2.0) * std::sqrt(3.0);
  }
};

struct PatientJitter {
  double angle, center_dr, center_dc, radius_scale, gain, tissue_phase;
};

}  // namespace

double pacing_phase_offset(PacingClass p) { return static_cast<int>(p) / 3.0; }

BlobTrajectory nominal_trajectory(const SynthConfig& cfg, ViewLabel view) {
  static constexpr std::array<double, 4> kLateral = {-0.12, 0.12, -0.05, 0.05};
  static constexpr std::array<double, 4> kBase = {0.0, 0.7, 1.4, 2.1};
  static constexpr std::array<double, 4> kDirection = {1.0, -1.0, 1.0, -1.0};
  const auto fan = fan_geometry(cfg);
  const int v = static_cast<int>(view);
  const double depth = 0.55 * fan.radius;
  BlobTrajectory t;
  t.center_row = fan.apex_row + depth * std::cos(kLateral[v]);
  t.center_col = fan.apex_col + depth * std::sin(kLateral[v]);
  t.radius = 0.18 * static_cast<double>(cfg.rows);
  t.base_angle = kBase[v];
  t.direction = kDirection[v];
  t.blob_sigma = 0.06 * static_cast<double>(cfg.rows);
  return t;
}

DatasetManifest generate_synthetic(int n_patients, std::uint64_t seed, const SynthConfig& cfg,
                                   const fs::path& out_dir) {
  if (n_patients < 1) throw std::invalid_argument("generate_synthetic: n_patients must be >= 1");
  if (cfg.min_beats < 1 || cfg.max_beats < cfg.min_beats || cfg.min_beat_frames < 2 ||
      cfg.max_beat_frames < cfg.min_beat_frames || cfg.rows < 16 || cfg.cols < 16) {
    throw std::invalid_argument("generate_synthetic: invalid SynthConfig");
  }
  std::error_code ec;
  fs::create_directories(out_dir / "frames", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "frames").string() + ": " + ec.message());

  const auto fan = fan_geometry(cfg);
  const std::int64_t rows = cfg.rows, cols = cfg.cols;

  // Fan support and polar coordinates are shared by every frame.
  std::vector<std::uint8_t> in_fan(static_cast<std::size_t>(rows * cols), 0);
  std::vector<float> depth(in_fan.size(), 0.f), bearing(in_fan.size(), 0.f);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      const double dr = static_cast<double>(r) - fan.apex_row;
      const double dc = static_cast<double>(c) - fan.apex_col;
      const double d = std::hypot(dr, dc);
      const double a = std::atan2(dc, dr);
      const auto i = static_cast<std::size_t>(r * cols + c);
      depth[i] = static_cast<float>(d);
      bearing[i] = static_cast<float>(a);
      in_fan[i] = (d <= fan.radius && d >= fan.inner && std::abs(a) <= kFanHalfAngle) ? 1 : 0;
    }
  }

  const int width = std::max(2, static_cast<int>(std::to_string(n_patients).size()));
  DatasetManifest manifest;
  manifest.base_dir = out_dir;

  std::vector<float> tissue(in_fan.size());
  std::vector<std::uint8_t> pixels(in_fan.size());

  for (int pi = 0; pi < n_patients; ++pi) {
    std::string pid = std::to_string(pi + 1);
    pid = "P" + std::string(static_cast<std::size_t>(std::max<int>(0, width - static_cast<int>(pid.size()))), '0') + pid;
    PatientRecord patient;
    patient.patient_id = pid;

    Rng prng(derive_seed({seed, 0x5041ULL, static_cast<std::uint64_t>(pi)}));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(prng); };
    PatientJitter jit{uniform(-cfg.phase_jitter, cfg.phase_jitter),
                      uniform(-0.02, 0.02) * static_cast<double>(rows),
                      uniform(-0.02, 0.02) * static_cast<double>(rows),
                      uniform(0.9, 1.1),
                      uniform(0.9, 1.1),
                      uniform(0.0, 2.0 * std::numbers::pi)};

    for (auto view : kAllViews) {
      // Static tissue texture: view-specific echogenic bands inside the fan.
      const int v = static_cast<int>(view);
      for (std::size_t i = 0; i < tissue.size(); ++i) {
        if (!in_fan[i]) {
          tissue[i] = 0.f;
          continue;
        }
        const double d = depth[i] / fan.radius;
        const double band = std::exp(-std::pow((d - 0.85 + 0.05 * v) / 0.04, 2.0));
        const double ripple = 0.5 + 0.5 * std::sin(7.0 * bearing[i] + 3.0 * v + jit.tissue_phase);
        tissue[i] = static_cast<float>(45.0 + 50.0 * band * ripple + 10.0 * d);
      }

      BlobTrajectory traj = nominal_trajectory(cfg, view);
      traj.center_row += jit.center_dr;
      traj.center_col += jit.center_dc;
      traj.radius *= jit.radius_scale;
      const double amplitude = 140.0 * jit.gain;

      for (auto pacing : kAllPacing) {
        ClipRecord clip;
        clip.clip_id = patient.patient_id + "_" + std::string(to_string(view)) + "_" +
                       std::string(to_string(pacing));
        clip.view = view;
        clip.pacing = pacing;
        clip.frame_store = "frames/" + clip.clip_id;

        Rng crng(derive_seed({seed, 0x434CULL, static_cast<std::uint64_t>(pi),
                              static_cast<std::uint64_t>(v), static_cast<std::uint64_t>(pacing)}));
        std::uniform_int_distribution<int> n_beats_dist(cfg.min_beats, cfg.max_beats);
        std::uniform_int_distribution<int> len_dist(cfg.min_beat_frames, cfg.max_beat_frames);
        std::uniform_int_distribution<int> pr_jitter(-1, 1);
        const int n_beats = n_beats_dist(crng);
        std::int64_t cursor = 0;
        for (int b = 0; b < n_beats; ++b) {
          const int len = len_dist(crng);
          BeatAnnotation beat;
          beat.start_frame = cursor;
          beat.end_frame = cursor + len;
          beat.pr_frame = std::clamp<std::int64_t>(
              cursor + std::lround(0.2 * len) + pr_jitter(crng), cursor, beat.end_frame - 1);
          clip.beats.push_back(beat);
          cursor += len;
        }
        clip.frame_count = cursor;

        const fs::path store = out_dir / clip.frame_store;
        fs::create_directories(store, ec);
        if (ec) throw std::runtime_error("cannot create " + store.string() + ": " + ec.message());

        for (const auto& beat : clip.beats) {
          for (std::int64_t t = beat.start_frame; t < beat.end_frame; ++t) {
            const double phase = static_cast<double>(t - beat.start_frame) /
                                 static_cast<double>(beat.length());
            const double angle = traj.base_angle + jit.angle +
                                 2.0 * std::numbers::pi * traj.direction *
                                     (phase + pacing_phase_offset(pacing));
            const double br = traj.center_row + traj.radius * std::cos(angle);
            const double bc = traj.center_col + traj.radius * std::sin(angle);
            const double inv2s2 = 1.0 / (2.0 * traj.blob_sigma * traj.blob_sigma);
            const std::int64_t reach = static_cast<std::int64_t>(std::ceil(3.5 * traj.blob_sigma));

            HashNoise noise{derive_seed({seed, 0x4652ULL, static_cast<std::uint64_t>(pi),
                                         static_cast<std::uint64_t>(v),
                                         static_cast<std::uint64_t>(pacing),
                                         static_cast<std::uint64_t>(t)})};
            for (std::size_t i = 0; i < pixels.size(); ++i) {
              if (!in_fan[i]) {
                pixels[i] = 0;
                continue;
              }
              const double val = tissue[i] + cfg.speckle_sigma * noise.next();
              pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(val), 1L, 255L));
            }
            const std::int64_t r0 = std::max<std::int64_t>(0, std::lround(br) - reach);
            const std::int64_t r1 = std::min<std::int64_t>(rows - 1, std::lround(br) + reach);
            const std::int64_t c0 = std::max<std::int64_t>(0, std::lround(bc) - reach);
            const std::int64_t c1 = std::min<std::int64_t>(cols - 1, std::lround(bc) + reach);
            for (std::int64_t r = r0; r <= r1; ++r) {
              for (std::int64_t c = c0; c <= c1; ++c) {
                const auto i = static_cast<std::size_t>(r * cols + c);
                if (!in_fan[i]) continue;
                const double dr = static_cast<double>(r) - br, dc = static_cast<double>(c) - bc;
                const double add = amplitude * std::exp(-(dr * dr + dc * dc) * inv2s2);
                pixels[i] = static_cast<std::uint8_t>(
                    std::clamp(std::lround(pixels[i] + add), 1L, 255L));
              }
            }
            write_frame_png(frame_path(store, t), pixels, rows, cols);
          }
        }
        patient.clips.push_back(std::move(clip));
      }
    }
    manifest.ordering.push_back(patient.patient_id);
    manifest.patients.push_back(std::move(patient));
  }
  write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace ice
