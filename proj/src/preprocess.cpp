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

#include "ice/preprocess.hpp"

#include <algorithm>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

namespace ice {

void PreprocessConfig::validate() const {
  if (target_frames < 1) throw PreprocessError("target_frames must be >= 1");
  if (crop_rows < 1 || crop_cols < 1) throw PreprocessError("crop size must be positive");
  if (resize_factor.num <= 0 || resize_factor.den <= 0 || resize_factor.num > resize_factor.den) {
    throw PreprocessError("resize_factor must lie in (0, 1]");
  }
  if (!(mask_variance_threshold >= 0.0)) throw PreprocessError("mask_variance_threshold must be >= 0");
  if (crop_origin && (crop_origin->first < 0 || crop_origin->second < 0)) {
    throw PreprocessError("crop origin must be non-negative");
  }
}

namespace {

// Keeps only the largest 8-connected component of `bits`; the earliest in raster order wins ties.
/// s += f, q += f^2 elementwise. Cloned for AVX2 where the CPU has it.
#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
__attribute__((target_clones("avx2", "default")))
#endif
void accumulate_moments(const std::uint8_t* __restrict f, std::int64_t len, std::uint32_t* __restrict s,
                        std::uint32_t* __restrict q) {
  for (std::int64_t i = 0; i < len; ++i) {
    const std::uint32_t v = f[i];
    s[i] += v;
    q[i] += v * v;
  }
}

void keep_largest_component(Mask& mask) {
  if (mask.bits.empty()) return;
  const cv::Mat bits(static_cast<int>(mask.rows), static_cast<int>(mask.cols), CV_8UC1, mask.bits.data());
  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(bits, labels, stats, centroids, 8, CV_32S);
  // Labels follow raster order of each component's first pixel; ties keep the earliest.
  int best = 0, best_size = 0;
  for (int k = 1; k < n; ++k) {
    const int size = stats.at<int>(k, cv::CC_STAT_AREA);
    if (size > best_size) {
      best_size = size;
      best = k;
    }
  }
  const auto* lab = labels.ptr<std::int32_t>();
  for (std::size_t i = 0; i < mask.bits.size(); ++i) mask.bits[i] = (best != 0 && lab[i] == best) ? 1 : 0;
}

void check_beats(std::span<const BeatAnnotation> beats, std::int64_t frames) {
  for (std::size_t k = 0; k < beats.size(); ++k) {
    const auto& b = beats[k];
    if (b.start_frame < 0 || b.start_frame > b.pr_frame || b.pr_frame >= b.end_frame ||
        b.end_frame > frames) {
      throw PreprocessError("beat " + std::to_string(k) + " [" + std::to_string(b.start_frame) +
                            ", " + std::to_string(b.pr_frame) + ", " +
                            std::to_string(b.end_frame) + ") out of range for a clip of " +
                            std::to_string(frames) + " frames");
    }
  }
}

void check_rect(const CropRect& rect, std::int64_t rows, std::int64_t cols) {
  if (rect.rows < 1 || rect.cols < 1 || rect.row0 < 0 || rect.col0 < 0 ||
      rect.row0 + rect.rows > rows || rect.col0 + rect.cols > cols) {
    throw PreprocessError("crop rect (" + std::to_string(rect.row0) + ", " +
                          std::to_string(rect.col0) + ", " + std::to_string(rect.rows) + "x" +
                          std::to_string(rect.cols) + ") exceeds frame " + std::to_string(rows) +
                          "x" + std::to_string(cols));
  }
}

}  // namespace

Mask compute_mask(const VideoTensor& clip, double variance_threshold) {
  if (clip.frames() < 2) throw PreprocessError("compute_mask needs at least two frames");
  const std::int64_t n = clip.frame_size();
  std::vector<double> sum(static_cast<std::size_t>(n), 0.0), sq(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t t = 0; t < clip.frames(); ++t) {
    const auto f = clip.frame(t);
    for (std::int64_t i = 0; i < n; ++i) {
      const double v = f[i];
      sum[i] += v;
      sq[i] += v * v;
    }
  }
  const double inv_t = 1.0 / static_cast<double>(clip.frames());
  Mask mask{clip.rows(), clip.cols(), std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0)};
  for (std::int64_t i = 0; i < n; ++i) {
    const double mean = sum[i] * inv_t;
    const double var = std::max(0.0, sq[i] * inv_t - mean * mean);
    mask.bits[i] = (var > variance_threshold || mean > 0.0) ? 1 : 0;
  }
  keep_largest_component(mask);
  return mask;
}

Mask compute_mask_raw(const RawVideo& clip, double variance_threshold) {
  if (clip.frames() < 1) throw PreprocessError("compute_mask_raw needs at least one frame");
  const std::int64_t n = clip.frame_size();
  const std::int64_t frames = clip.frames();
  const auto T = static_cast<std::uint64_t>(frames);
  // var(v / 255) > thr  <=>  T * sq - sum^2 > thr * 255^2 * T^2, evaluated exactly in integers
  // on the left.
  const double bound = variance_threshold * 65025.0 * static_cast<double>(T) * static_cast<double>(T);
  Mask mask{clip.rows(), clip.cols(), std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0)};

  // Pixels are processed in tiles so the accumulators stay cache resident. 32-bit sums of
  // squares are exact while 255^2 * T < 2^32; frame chunks of that length are folded into
  // 64-bit totals.
  constexpr std::int64_t kTile = 2048;
  constexpr std::int64_t kChunk = 66051;
  std::vector<std::uint32_t> s32(kTile), q32(kTile);
  std::vector<std::uint64_t> s64(kTile), q64(kTile);
  for (std::int64_t i0 = 0; i0 < n; i0 += kTile) {
    const std::int64_t len = std::min(kTile, n - i0);
    std::fill(s64.begin(), s64.end(), 0);
    std::fill(q64.begin(), q64.end(), 0);
    for (std::int64_t t0 = 0; t0 < frames; t0 += kChunk) {
      std::fill(s32.begin(), s32.end(), 0);
      std::fill(q32.begin(), q32.end(), 0);
      const std::int64_t t1 = std::min(frames, t0 + kChunk);
      for (std::int64_t t = t0; t < t1; ++t) {
        accumulate_moments(clip.frame(t).data() + i0, len, s32.data(), q32.data());
      }
      for (std::int64_t i = 0; i < len; ++i) {
        s64[i] += s32[i];
        q64[i] += q32[i];
      }
    }
    for (std::int64_t i = 0; i < len; ++i) {
      const std::uint64_t spread = T * q64[i] - s64[i] * s64[i];
      mask.bits[static_cast<std::size_t>(i0 + i)] =
          (static_cast<double>(spread) > bound || s64[i] > 0) ? 1 : 0;
    }
  }
  keep_largest_component(mask);
  return mask;
}

void apply_mask(VideoTensor& clip, const Mask& mask) {
  if (mask.rows != clip.rows() || mask.cols != clip.cols()) {
    throw PreprocessError("mask size does not match clip");
  }
  for (std::int64_t t = 0; t < clip.frames(); ++t) {
    auto f = clip.frame(t);
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (!mask.bits[i]) f[i] = 0.0f;
    }
  }
}

VideoTensor normalize(const RawVideo& raw) {
  VideoTensor out(raw.frames(), raw.rows(), raw.cols());
  std::transform(raw.values().begin(), raw.values().end(), out.values().begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return out;
}

std::vector<VideoTensor> segment_heartbeats(const VideoTensor& clip,
                                            std::span<const BeatAnnotation> beats) {
  check_beats(beats, clip.frames());
  std::vector<VideoTensor> out;
  out.reserve(beats.size());
  for (const auto& b : beats) {
    VideoTensor sub(b.length(), clip.rows(), clip.cols());
    std::copy(clip.data() + b.start_frame * clip.frame_size(),
              clip.data() + b.end_frame * clip.frame_size(), sub.data());
    out.push_back(std::move(sub));
  }
  return out;
}

CropRect mask_centered_rect(const Mask& mask, std::int64_t rows, std::int64_t cols) {
  if (rows > mask.rows || cols > mask.cols) {
    throw PreprocessError("crop size " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " exceeds frame " + std::to_string(mask.rows) + "x" +
                          std::to_string(mask.cols));
  }
  std::int64_t rmin = mask.rows, rmax = -1, cmin = mask.cols, cmax = -1;
  for (std::int64_t r = 0; r < mask.rows; ++r) {
    for (std::int64_t c = 0; c < mask.cols; ++c) {
      if (mask(r, c)) {
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
    }
  }
  if (rmax < 0) {  // empty mask: centre of the frame
    rmin = 0;
    rmax = mask.rows - 1;
    cmin = 0;
    cmax = mask.cols - 1;
  }
  CropRect rect;
  rect.rows = rows;
  rect.cols = cols;
  rect.row0 = std::clamp((rmin + rmax + 1) / 2 - rows / 2, std::int64_t{0}, mask.rows - rows);
  rect.col0 = std::clamp((cmin + cmax + 1) / 2 - cols / 2, std::int64_t{0}, mask.cols - cols);
  return rect;
}

CropRect resolve_crop_rect(const PreprocessConfig& cfg, const Mask& mask) {
  if (cfg.crop_origin) {
    CropRect rect{cfg.crop_origin->first, cfg.crop_origin->second, cfg.crop_rows, cfg.crop_cols};
    check_rect(rect, mask.rows, mask.cols);
    return rect;
  }
  return mask_centered_rect(mask, cfg.crop_rows, cfg.crop_cols);
}

VideoTensor crop(const VideoTensor& clip, const CropRect& rect) {
  check_rect(rect, clip.rows(), clip.cols());
  VideoTensor out(clip.frames(), rect.rows, rect.cols);
  for (std::int64_t t = 0; t < clip.frames(); ++t) {
    for (std::int64_t r = 0; r < rect.rows; ++r) {
      const float* src = &clip.at(t, rect.row0 + r, rect.col0);
      std::copy(src, src + rect.cols, &out.at(t, r, 0));
    }
  }
  return out;
}

namespace {

/// Bilinear resample of one frame, clamped to [0, 1].
void resize_frame(const float* src, std::int64_t rows, std::int64_t cols, float* dst,
                  std::int64_t out_rows, std::int64_t out_cols) {
  const cv::Mat in(static_cast<int>(rows), static_cast<int>(cols), CV_32FC1, const_cast<float*>(src));
  cv::Mat out(static_cast<int>(out_rows), static_cast<int>(out_cols), CV_32FC1, dst);
  cv::resize(in, out, out.size(), 0, 0, cv::INTER_LINEAR);
  for (std::int64_t i = 0; i < out_rows * out_cols; ++i) dst[i] = std::clamp(dst[i], 0.0f, 1.0f);
}

}  // namespace

VideoTensor resize(const VideoTensor& clip, Rational factor) {
  if (factor.num <= 0 || factor.den <= 0 || factor.num > factor.den) {
    throw PreprocessError("resize factor must lie in (0, 1]");
  }
  if (factor.num == factor.den) return clip;
  const std::int64_t rows = factor.scale(clip.rows()), cols = factor.scale(clip.cols());
  VideoTensor out(clip.frames(), rows, cols);
  for (std::int64_t t = 0; t < clip.frames(); ++t) {
    resize_frame(clip.frame(t).data(), clip.rows(), clip.cols(), out.frame(t).data(), rows, cols);
  }
  return out;
}

VideoTensor standardize_temporal(const VideoTensor& clip, std::int64_t target_frames) {
  if (clip.frames() < 1) throw PreprocessError("standardize_temporal needs at least one frame");
  if (target_frames < 1) throw PreprocessError("target_frames must be >= 1");
  VideoTensor out(target_frames, clip.rows(), clip.cols());
  const std::int64_t keep = std::min(clip.frames(), target_frames);
  std::copy(clip.data(), clip.data() + keep * clip.frame_size(), out.data());
  const auto last = clip.frame(keep - 1);
  for (std::int64_t t = keep; t < target_frames; ++t) {
    std::copy(last.begin(), last.end(), out.frame(t).begin());
  }
  return out;
}

std::vector<VideoTensor> preprocess_pipeline(const RawVideo& clip,
                                             std::span<const BeatAnnotation> beats,
                                             const PreprocessConfig& cfg) {
  cfg.validate();
  if (beats.empty()) return {};
  check_beats(beats, clip.frames());

  const Mask mask = compute_mask_raw(clip, cfg.mask_variance_threshold);
  const CropRect rect = resolve_crop_rect(cfg, mask);

  // Crop, resize and temporal standardization act frame by frame, so only the first
  // target_frames of each beat are materialized, one cropped frame at a time; the result
  // is identical to running the stages on whole beats.
  const bool identity = cfg.resize_factor.num == cfg.resize_factor.den;
  const std::int64_t out_rows = identity ? rect.rows : cfg.resize_factor.scale(rect.rows);
  const std::int64_t out_cols = identity ? rect.cols : cfg.resize_factor.scale(rect.cols);
  std::vector<float> scratch(identity ? 0 : static_cast<std::size_t>(rect.rows * rect.cols));
  std::vector<VideoTensor> out;
  out.reserve(beats.size());
  for (const auto& b : beats) {
    const std::int64_t n = std::min(b.length(), cfg.target_frames);
    VideoTensor sample(cfg.target_frames, out_rows, out_cols);
    for (std::int64_t t = 0; t < n; ++t) {
      float* crop_dst = identity ? sample.frame(t).data() : scratch.data();
      for (std::int64_t r = 0; r < rect.rows; ++r) {
        const std::uint8_t* src = &clip.at(b.start_frame + t, rect.row0 + r, rect.col0);
        const std::uint8_t* keep = &mask.bits[static_cast<std::size_t>(
            (rect.row0 + r) * mask.cols + rect.col0)];
        float* dst = crop_dst + r * rect.cols;
        for (std::int64_t c = 0; c < rect.cols; ++c) {
          dst[c] = keep[c] ? static_cast<float>(src[c]) / 255.0f : 0.0f;
        }
      }
      if (!identity) resize_frame(scratch.data(), rect.rows, rect.cols, sample.frame(t).data(), out_rows, out_cols);
    }
    // Pad by repeating the last kept frame.
    const auto last = sample.frame(n - 1);
    for (std::int64_t t = n; t < cfg.target_frames; ++t) std::copy(last.begin(), last.end(), sample.frame(t).begin());
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace ice
