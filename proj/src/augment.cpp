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

#include "ice/augment.hpp"

#include <algorithm>
#include <mutex>
#include <stdexcept>

#include "ice/preprocess.hpp"

namespace ice {

namespace {

std::mutex g_observer_mutex;
std::function<void(std::string_view)> g_observer;

void notify(std::string_view key) {
  std::lock_guard lock(g_observer_mutex);
  if (g_observer) g_observer(key);
}

}  // namespace

AugmentObserverScope::AugmentObserverScope(std::function<void(std::string_view)> observer) {
  std::lock_guard lock(g_observer_mutex);
  previous_ = std::exchange(g_observer, std::move(observer));
}

AugmentObserverScope::~AugmentObserverScope() {
  std::lock_guard lock(g_observer_mutex);
  g_observer = std::move(previous_);
}

void AugmentConfig::validate() const {
  if (variants < 0) throw std::invalid_argument("augment.variants must be >= 0");
  if (brightness_range.first > brightness_range.second ||
      contrast_range.first > contrast_range.second) {
    throw std::invalid_argument("augment ranges must be ordered");
  }
  if (!(frame_drop_prob >= 0.0 && frame_drop_prob <= 1.0)) {
    throw std::invalid_argument("augment.frame_drop_prob must lie in [0, 1]");
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("augment.noise_sigma must be >= 0");
  if (target_frames < 1) throw std::invalid_argument("augment.target_frames must be >= 1");
}

VideoTensor brightness_contrast_jitter(const VideoTensor& x, double b, double c) {
  VideoTensor out = x;
  if (x.empty()) return out;
  double sum = 0.0;
  for (float v : x.values()) sum += static_cast<double>(v) * b;
  const double mu = sum / static_cast<double>(x.size());
  // (x*b - mu)*c + mu, arranged so that c == 1 returns x*b exactly.
  const double offset = mu * (1.0 - c);
  for (auto& v : out.values()) {
    const double y = static_cast<double>(v) * b * c + offset;
    v = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  return out;
}

VideoTensor drop_frames(const VideoTensor& x, double p, Rng& rng, std::int64_t target_frames) {
  if (x.frames() < 1) throw std::invalid_argument("drop_frames needs at least one frame");
  std::bernoulli_distribution drop(std::clamp(p, 0.0, 1.0));
  std::vector<std::int64_t> keep;
  for (std::int64_t t = 0; t < x.frames(); ++t) {
    if (!drop(rng)) keep.push_back(t);
  }
  if (keep.empty()) keep.push_back(0);
  VideoTensor kept(static_cast<std::int64_t>(keep.size()), x.rows(), x.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto src = x.frame(keep[i]);
    std::copy(src.begin(), src.end(), kept.frame(static_cast<std::int64_t>(i)).begin());
  }
  return standardize_temporal(kept, target_frames);
}

VideoTensor add_gaussian_noise(const VideoTensor& x, double sigma, Rng& rng) {
  VideoTensor out = x;
  if (sigma <= 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out.values()) {
    v = static_cast<float>(std::clamp(static_cast<double>(v) + noise(rng), 0.0, 1.0));
  }
  return out;
}

std::vector<VideoTensor> make_variants(const VideoTensor& x, const AugmentConfig& cfg,
                                       std::string_view sample_key) {
  cfg.validate();
  notify(sample_key);
  std::vector<VideoTensor> out;
  out.reserve(static_cast<std::size_t>(cfg.variants));
  const std::uint64_t key = fnv1a(sample_key);
  for (int i = 0; i < cfg.variants; ++i) {
    Rng rng(derive_seed({cfg.seed, key, static_cast<std::uint64_t>(i)}));
    std::uniform_real_distribution<double> bdist(cfg.brightness_range.first,
                                                 cfg.brightness_range.second);
    std::uniform_real_distribution<double> cdist(cfg.contrast_range.first, cfg.contrast_range.second);
    const double b = bdist(rng);
    const double c = cdist(rng);
    VideoTensor v = brightness_contrast_jitter(x, b, c);
    v = drop_frames(v, cfg.frame_drop_prob, rng, cfg.target_frames);
    v = add_gaussian_noise(v, cfg.noise_sigma, rng);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace ice
