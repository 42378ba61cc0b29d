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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ice/video.hpp"

namespace ice {

enum class PacingClass : int { NSR = 0, DIST = 1, PROX = 2 };
enum class ViewLabel : int { TV = 0, MV = 1, LPV = 2, CT = 3 };

inline constexpr int kNumPacingClasses = 3;
inline constexpr int kNumViews = 4;
inline constexpr std::array<PacingClass, 3> kAllPacing = {PacingClass::NSR, PacingClass::DIST,
                                                          PacingClass::PROX};
inline constexpr std::array<ViewLabel, 4> kAllViews = {ViewLabel::TV, ViewLabel::MV, ViewLabel::LPV,
                                                       ViewLabel::CT};

std::string_view to_string(PacingClass p);
std::string_view to_string(ViewLabel v);
std::optional<PacingClass> parse_pacing(std::string_view s);
std::optional<ViewLabel> parse_view(std::string_view s);
/// Maps an integer class id to a PacingClass; throws std::out_of_range otherwise.
PacingClass pacing_from_id(int id);

struct BeatAnnotation {
  std::int64_t start_frame = 0;
  std::int64_t pr_frame = 0;
  std::int64_t end_frame = 0;  // exclusive

  std::int64_t length() const noexcept { return end_frame - start_frame; }
  bool operator==(const BeatAnnotation&) const = default;
};

struct ClipRecord {
  std::string clip_id;
  ViewLabel view = ViewLabel::TV;
  PacingClass pacing = PacingClass::NSR;
  std::string frame_store;  // relative to the manifest directory unless absolute
  std::int64_t frame_count = 0;
  std::vector<BeatAnnotation> beats;

  bool operator==(const ClipRecord&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<ClipRecord> clips;

  std::int64_t beat_count() const noexcept;
  bool operator==(const PatientRecord&) const = default;
};

struct DatasetManifest {
  std::vector<PatientRecord> patients;
  /// Deterministic patient ordering used by the fold engine.
  std::vector<std::string> ordering;
  /// Directory relative frame stores resolve against. Not serialized.
  std::filesystem::path base_dir;

  const PatientRecord* find_patient(std::string_view id) const noexcept;
  std::filesystem::path resolve(const ClipRecord& clip) const;

  bool operator==(const DatasetManifest& o) const {
    return patients == o.patients && ordering == o.ordering;
  }
};

/// Schema problems in a manifest document; the message names the field.
class ManifestParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Semantic problems such as duplicate identifiers.
class ManifestValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A frame store could not be read. `frame_index` is -1 when no single frame is at fault.
class ClipLoadError : public std::runtime_error {
 public:
  ClipLoadError(const std::string& what, std::int64_t frame_index)
      : std::runtime_error(what), frame_index_(frame_index) {}
  std::int64_t frame_index() const noexcept { return frame_index_; }

 private:
  std::int64_t frame_index_;
};

DatasetManifest parse_manifest_text(std::string_view text, std::filesystem::path base_dir = {});
DatasetManifest parse_manifest(const std::filesystem::path& path);
std::string serialize_manifest(const DatasetManifest& m);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);

/// Returns one human-readable description per violated invariant; empty when valid.
/// Frame stores are only inspected when `check_storage` is set.
std::vector<std::string> validate_manifest(const DatasetManifest& m, bool check_storage = true);

std::filesystem::path frame_path(const std::filesystem::path& store, std::int64_t index);

RawVideo load_raw_clip(const std::filesystem::path& store, std::int64_t frame_count);
RawVideo load_raw_clip(const DatasetManifest& m, const ClipRecord& clip);
/// Loads and maps 8-bit intensities to [0, 1].
VideoTensor load_clip(const DatasetManifest& m, const ClipRecord& clip);

void write_frame_png(const std::filesystem::path& path, std::span<const std::uint8_t> pixels,
                     std::int64_t rows, std::int64_t cols);

struct SynthConfig {
  std::int64_t rows = 708;
  std::int64_t cols = 1016;
  int min_beats = 8;
  int max_beats = 14;
  int min_beat_frames = 20;
  int max_beat_frames = 45;
  /// Standard deviation of per-pixel speckle, in 8-bit units.
  double speckle_sigma = 6.0;
  /// Per-patient angular jitter of the blob trajectory, radians (uniform half-width).
  double phase_jitter = 0.25;

  static SynthConfig small() {
    SynthConfig c;
    c.rows = 177;
    c.cols = 254;
    return c;
  }
};

/// Geometry of the synthetic blob trajectory for one clip; exposed so that tests
/// can build independent baselines against the generator's ground truth.
struct BlobTrajectory {
  double center_row = 0;
  double center_col = 0;
  double radius = 0;
  double base_angle = 0;   // angle at beat onset for NSR, radians
  double direction = 1;    // +1 or -1 revolutions per beat
  double blob_sigma = 0;
};

/// Nominal trajectory for a view before per-patient jitter, in raw pixel units.
BlobTrajectory nominal_trajectory(const SynthConfig& cfg, ViewLabel view);

/// Phase offset (fraction of a revolution) that encodes the pacing class.
double pacing_phase_offset(PacingClass p);

/// Writes frames under `out_dir/frames/<clip_id>/` and the manifest to
/// `out_dir/manifest.json`. Deterministic in (n_patients, seed, cfg).
DatasetManifest generate_synthetic(int n_patients, std::uint64_t seed, const SynthConfig& cfg,
                                   const std::filesystem::path& out_dir);

}  // namespace ice
