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
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ice/corpus.hpp"
#include "ice/video.hpp"

namespace ice {

class PreprocessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Positive rational scale factor in (0, 1].
struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;

  /// floor(dim * num / den), never below 1.
  std::int64_t scale(std::int64_t dim) const noexcept {
    const std::int64_t v = dim * num / den;
    return v < 1 ? 1 : v;
  }
  double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
};

struct CropRect {
  std::int64_t row0 = 0;
  std::int64_t col0 = 0;
  std::int64_t rows = 553;
  std::int64_t cols = 756;
  bool operator==(const CropRect&) const = default;
};

struct PreprocessConfig {
  std::int64_t target_frames = 32;
  std::int64_t crop_rows = 553;
  std::int64_t crop_cols = 756;
  /// Explicit crop origin (row0, col0); when absent the window is centred on the mask.
  std::optional<std::pair<std::int64_t, std::int64_t>> crop_origin;
  Rational resize_factor{1, 4};
  /// Temporal variance threshold, in normalized [0, 1] intensity units.
  double mask_variance_threshold = 1e-4;

  void validate() const;
};

/// Pixels whose temporal variance exceeds `variance_threshold` or whose temporal mean is
/// positive, restricted to the largest 8-connected region. Requires at least two frames.
Mask compute_mask(const VideoTensor& clip, double variance_threshold);
/// Same rule evaluated on raw 8-bit frames (threshold still in normalized units).
/// Accepts single-frame clips, for which the variance clause is inactive.
Mask compute_mask_raw(const RawVideo& clip, double variance_threshold);

/// Zeroes every pixel outside the mask, in place.
void apply_mask(VideoTensor& clip, const Mask& mask);

VideoTensor normalize(const RawVideo& raw);

std::vector<VideoTensor> segment_heartbeats(const VideoTensor& clip,
                                            std::span<const BeatAnnotation> beats);

/// A window of (rows, cols) centred on the mask's bounding box and clamped to the frame.
CropRect mask_centered_rect(const Mask& mask, std::int64_t rows, std::int64_t cols);
CropRect resolve_crop_rect(const PreprocessConfig& cfg, const Mask& mask);

VideoTensor crop(const VideoTensor& clip, const CropRect& rect);
/// Per-frame bilinear resampling to floor(dim * factor).
VideoTensor resize(const VideoTensor& clip, Rational factor);
VideoTensor standardize_temporal(const VideoTensor& clip, std::int64_t target_frames = 32);

/// mask -> normalize -> segment -> crop -> resize -> standardize. Every returned sample
/// has shape (1, target_frames, H', W').
std::vector<VideoTensor> preprocess_pipeline(const RawVideo& clip,
                                             std::span<const BeatAnnotation> beats,
                                             const PreprocessConfig& cfg);

}  // namespace ice
