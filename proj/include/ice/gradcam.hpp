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

#include <filesystem>
#include <stdexcept>
#include <string>

#include <torch/torch.h>

#include "ice/corpus.hpp"
#include "ice/model.hpp"
#include "ice/raster.hpp"
#include "ice/video.hpp"

namespace ice {

/// Final convolution of the last residual stage.
inline constexpr const char* kDefaultGradcamLayer = "layer4.1.conv2";

class GradcamConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Saliency volume aligned with the input sample, values in [0, 1].
struct Heatmap {
  VideoTensor values;
};

/// Rectified channel-weighted combination of a (C, t, h, w) activation, with weights taken
/// as the spatiotemporal mean of `gradient`, scaled so the maximum is 1 (all zeros if the
/// maximum is 0). Returns a (t, h, w) tensor.
torch::Tensor gradcam_map(const torch::Tensor& activation, const torch::Tensor& gradient);

/// Grad-CAM of `target_class` at `layer` for one sample, upsampled trilinearly to the
/// sample's (T, H, W). The model is put in evaluation mode.
Heatmap compute_gradcam(TappableVideoModel& model, const VideoTensor& sample, int target_class,
                        const std::string& layer = kDefaultGradcamLayer);

struct OverlayMeta {
  std::string patient_id;
  std::string clip_id;
  PacingClass true_label = PacingClass::NSR;
  PacingClass predicted_label = PacingClass::NSR;
};

inline constexpr std::int64_t kOverlayHeaderHeight = 22;
inline constexpr std::int64_t kOverlayPanelGap = 4;
inline constexpr double kOverlayAlpha = 0.4;

/// Diverging cool-to-warm ramp, v in [0, 1].
Rgb coolwarm(double v) noexcept;

/// Upscale factor that makes a panel of width `cols` at least 128 pixels wide.
std::int64_t overlay_scale(std::int64_t cols) noexcept;

std::string overlay_header(const OverlayMeta& meta, std::int64_t frame);

/// One image per frame: header text above an "ORIGINAL" panel and a "GRAD-CAM" panel.
std::vector<RgbImage> render_overlay(const VideoTensor& sample, const Heatmap& heatmap,
                                     const OverlayMeta& meta);

std::string overlay_filename(const OverlayMeta& meta);

/// Writes `dir/overlay_filename(meta)` and returns its path.
std::filesystem::path export_overlay(const VideoTensor& sample, const Heatmap& heatmap,
                                     const OverlayMeta& meta, const std::filesystem::path& dir);

}  // namespace ice
