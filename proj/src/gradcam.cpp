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

#include "ice/gradcam.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

namespace ice {

torch::Tensor gradcam_map(const torch::Tensor& activation, const torch::Tensor& gradient) {
  if (activation.dim() != 4 || !activation.sizes().equals(gradient.sizes())) {
    throw ShapeError("gradcam_map: expected matching (C, t, h, w) activation and gradient");
  }
  const torch::Tensor weights = gradient.mean({1, 2, 3}, /*keepdim=*/true);
  torch::Tensor cam = torch::relu((weights * activation).sum(0));
  const double peak = cam.max().item<double>();
  if (!(peak > 0.0)) return torch::zeros_like(cam);
  return cam / peak;
}

Heatmap compute_gradcam(TappableVideoModel& model, const VideoTensor& sample, int target_class,
                        const std::string& layer) {
  const auto names = model.conv_layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    throw GradcamConfigError("grad-cam layer '" + layer + "' is not a volumetric convolution");
  }
  model.set_training(false);

  const auto [T, H, W] = std::array{sample.frames(), sample.rows(), sample.cols()};
  torch::Tensor x = torch::from_blob(const_cast<float*>(sample.values().data()), {1, 1, T, H, W},
                                     torch::kFloat32)
                        .clone();
  torch::AutoGradMode grad_on(true);
  TappedForward out = model.forward_tapped(x, layer);
  if (target_class < 0 || target_class >= out.logits.size(1)) {
    throw std::out_of_range("grad-cam target class " + std::to_string(target_class) +
                            " outside the model's classes");
  }

  torch::Tensor cam;
  const torch::Tensor logit = out.logits.index({0, target_class});
  if (logit.requires_grad() && out.activation.defined() && out.activation.requires_grad()) {
    auto grads = torch::autograd::grad({logit}, {out.activation}, {}, /*retain_graph=*/false,
                                       /*create_graph=*/false, /*allow_unused=*/true);
    if (grads[0].defined()) cam = gradcam_map(out.activation[0].detach(), grads[0][0]);
  }
  if (!cam.defined()) {
    Heatmap zero;
    zero.values = VideoTensor(T, H, W);
    return zero;
  }

  torch::Tensor up = torch::nn::functional::interpolate(
      cam.unsqueeze(0).unsqueeze(0),
      torch::nn::functional::InterpolateFuncOptions()
          .size(std::vector<std::int64_t>{T, H, W})
          .mode(torch::kTrilinear)
          .align_corners(false));
  up = up.clamp(0.0, 1.0).contiguous();

  Heatmap hm;
  hm.values = VideoTensor(T, H, W);
  std::copy_n(up.data_ptr<float>(), hm.values.values().size(), hm.values.values().begin());
  return hm;
}

// ---------------------------------------------------------------------------
// Overlay rendering

Rgb coolwarm(double v) noexcept {
  static constexpr std::array<std::array<double, 3>, 5> kAnchors{{
      {59, 76, 192},
      {141, 176, 254},
      {221, 221, 221},
      {244, 154, 123},
      {180, 4, 38},
  }};
  v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  const double pos = v * (kAnchors.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(pos), kAnchors.size() - 2);
  const double f = pos - static_cast<double>(i);
  Rgb out{};
  for (int k = 0; k < 3; ++k) {
    out[k] = static_cast<std::uint8_t>(
        std::lround(kAnchors[i][k] + f * (kAnchors[i + 1][k] - kAnchors[i][k])));
  }
  return out;
}

std::int64_t overlay_scale(std::int64_t cols) noexcept {
  if (cols <= 0) return 1;
  return std::max<std::int64_t>(1, (128 + cols - 1) / cols);
}

std::string overlay_header(const OverlayMeta& meta, std::int64_t frame) {
  return "ID:" + meta.patient_id + " TRUE:" + std::string(to_string(meta.true_label)) +
         " PRED:" + std::string(to_string(meta.predicted_label)) +
         " FRAME:" + std::to_string(frame);
}

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

std::vector<RgbImage> render_overlay(const VideoTensor& sample, const Heatmap& heatmap,
                                     const OverlayMeta& meta) {
  const VideoTensor& hm = heatmap.values;
  if (hm.frames() != sample.frames() || hm.rows() != sample.rows() || hm.cols() != sample.cols()) {
    throw ShapeError("render_overlay: heatmap is not aligned with the sample");
  }
  const std::int64_t s = overlay_scale(sample.cols());
  const std::int64_t pw = sample.cols() * s, ph = sample.rows() * s;
  const std::int64_t right_x = pw + kOverlayPanelGap;
  const std::int64_t longest = text_width(overlay_header(meta, sample.frames() - 1));
  const std::int64_t width = std::max(right_x + pw, longest + 4);
  const std::int64_t height = kOverlayHeaderHeight + ph;
  const Rgb white{255, 255, 255};

  std::vector<RgbImage> frames;
  frames.reserve(static_cast<std::size_t>(sample.frames()));
  for (std::int64_t t = 0; t < sample.frames(); ++t) {
    RgbImage img(width, height);
    draw_text(img, 2, 2, overlay_header(meta, t), white);
    draw_text(img, 2, 12, "ORIGINAL", white);
    draw_text(img, right_x + 2, 12, "GRAD-CAM", white);
    for (std::int64_t r = 0; r < sample.rows(); ++r) {
      for (std::int64_t c = 0; c < sample.cols(); ++c) {
        const std::uint8_t g = to_byte(sample.at(t, r, c));
        const double a = kOverlayAlpha * std::clamp<double>(hm.at(t, r, c), 0.0, 1.0);
        const Rgb cm = coolwarm(hm.at(t, r, c));
        Rgb blend;
        for (int k = 0; k < 3; ++k) {
          blend[k] = static_cast<std::uint8_t>(std::lround((1.0 - a) * g + a * cm[k]));
        }
        for (std::int64_t dy = 0; dy < s; ++dy) {
          const std::int64_t y = kOverlayHeaderHeight + r * s + dy;
          for (std::int64_t dx = 0; dx < s; ++dx) {
            img.set(c * s + dx, y, {g, g, g});
            img.set(right_x + c * s + dx, y, blend);
          }
        }
      }
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

std::string overlay_filename(const OverlayMeta& meta) {
  return meta.patient_id + "_" + meta.clip_id + "_" + std::string(to_string(meta.true_label)) + "_" +
         std::string(to_string(meta.predicted_label)) + ".gif";
}

std::filesystem::path export_overlay(const VideoTensor& sample, const Heatmap& heatmap,
                                     const OverlayMeta& meta, const std::filesystem::path& dir) {
  const auto frames = render_overlay(sample, heatmap, meta);
  const auto bytes = encode_gif(frames, 10);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto path = dir / overlay_filename(meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write animation to " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing animation to " + path.string());
  return path;
}

}  // namespace ice
