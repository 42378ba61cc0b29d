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
#include <functional>
#include <string_view>
#include <utility>
#include <vector>

#include "ice/rng.hpp"
#include "ice/video.hpp"

namespace ice {

struct AugmentConfig {
  int variants = 3;  // A: augmented copies per original training sample
  std::pair<double, double> brightness_range{0.7, 1.3};
  std::pair<double, double> contrast_range{0.5, 1.5};
  double frame_drop_prob = 0.1;
  double noise_sigma = 0.02;
  std::int64_t target_frames = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

/// x' = clip((x*b - mu)*c + mu, 0, 1) with mu = mean(x*b) over the whole clip.
VideoTensor brightness_contrast_jitter(const VideoTensor& x, double b, double c);

/// Drops each frame independently with probability p (frame 0 survives if all would be
/// dropped), then pads or truncates back to `target_frames`.
VideoTensor drop_frames(const VideoTensor& x, double p, Rng& rng, std::int64_t target_frames = 32);

/// Adds i.i.d. N(0, sigma^2) per voxel and clips to [0, 1].
VideoTensor add_gaussian_noise(const VideoTensor& x, double sigma, Rng& rng);

/// Up to cfg.variants augmented copies of `x`. Randomness is derived from
/// (cfg.seed, sample_key, variant index), so results do not depend on call order.
std::vector<VideoTensor> make_variants(const VideoTensor& x, const AugmentConfig& cfg,
                                       std::string_view sample_key);

/// Receives the sample key of every make_variants call while installed. Used by the
/// leakage audit; one observer at a time.
class AugmentObserverScope {
 public:
  explicit AugmentObserverScope(std::function<void(std::string_view)> observer);
  ~AugmentObserverScope();
  AugmentObserverScope(const AugmentObserverScope&) = delete;
  AugmentObserverScope& operator=(const AugmentObserverScope&) = delete;

 private:
  std::function<void(std::string_view)> previous_;
};

}  // namespace ice
