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

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace ice {

enum class Backbone { Full, Reduced };

struct ModelConfig {
  std::int64_t in_channels = 1;
  std::int64_t adapter_channels = 64;
  std::array<std::int64_t, 3> adapter_kernel{9, 7, 7};
  std::array<std::int64_t, 3> adapter_stride{1, 3, 3};
  std::array<std::int64_t, 3> adapter_padding{1, 3, 3};
  double adapter_dropout = 0.1;
  double head_dropout = 0.2;
  std::int64_t n_classes = 3;
  Backbone backbone = Backbone::Full;
  /// Channel divisor applied to the adapter and every stage of the reduced backbone.
  std::int64_t width_divisor = 4;
  std::string pretrained_weights_path;

  std::int64_t width_scale() const noexcept { return backbone == Backbone::Reduced ? width_divisor : 1; }
  std::int64_t stem_channels() const noexcept { return adapter_channels / width_scale(); }
  std::array<std::int64_t, 4> stage_channels() const noexcept;
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class WeightLoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Output of a forward pass that also exposes one intermediate convolution output.
struct TappedForward {
  torch::Tensor logits;
  torch::Tensor activation;
};

/// Models that can expose a named volumetric convolution's output for attribution.
class TappableVideoModel {
 public:
  virtual ~TappableVideoModel() = default;
  virtual TappedForward forward_tapped(const torch::Tensor& x, const std::string& layer) = 0;
  virtual std::vector<std::string> conv_layer_names() const = 0;
  virtual void set_training(bool on) = 0;
};

/// 3D residual block with two 3x3x3 convolutions, named after torchvision's BasicBlock.
class BasicBlock3dImpl : public torch::nn::Module {
 public:
  BasicBlock3dImpl(std::int64_t in_planes, std::int64_t planes, std::int64_t stride);

  /// `tap` selects "conv1", "conv2" or "downsample" (empty for none); the selected
  /// convolution's output is stored in `*tapped`.
  torch::Tensor forward(const torch::Tensor& x, const std::string& tap = {},
                        torch::Tensor* tapped = nullptr);
  bool has_downsample() const noexcept { return !downsample_.is_empty(); }

 private:
  torch::nn::Sequential conv1_{nullptr};
  torch::nn::Sequential conv2_{nullptr};
  torch::nn::Sequential downsample_{nullptr};
};
TORCH_MODULE(BasicBlock3d);

/// Single-channel adapter stem -> four residual stages -> pooled linear head.
class IceNetImpl : public torch::nn::Module, public TappableVideoModel {
 public:
  explicit IceNetImpl(ModelConfig cfg);

  torch::Tensor forward(const torch::Tensor& x);
  TappedForward forward_tapped(const torch::Tensor& x, const std::string& layer) override;
  std::vector<std::string> conv_layer_names() const override;
  void set_training(bool on) override { train(on); }

  const ModelConfig& config() const noexcept { return cfg_; }
  torch::nn::Conv3d& adapter_conv() noexcept { return adapter_conv_; }
  torch::nn::Linear& fc() noexcept { return fc_; }

  /// Spatiotemporal size after the adapter and after each stage for a (T, H, W) input.
  /// Throws ShapeError if any axis collapses.
  static std::vector<std::array<std::int64_t, 3>> feature_shapes(const ModelConfig& cfg,
                                                                 std::array<std::int64_t, 3> input);

  /// Copies backbone stage tensors (layer1..layer4) from a tensor archive.
  void load_backbone(const std::string& path);

 private:
  torch::Tensor run(const torch::Tensor& x, const std::string& tap, torch::Tensor* tapped);

  ModelConfig cfg_;
  torch::nn::Conv3d adapter_conv_{nullptr};
  torch::nn::BatchNorm3d adapter_bn_{nullptr};
  torch::nn::Dropout3d adapter_drop_{nullptr};
  std::array<torch::nn::Sequential, 4> layers_{nullptr, nullptr, nullptr, nullptr};
  torch::nn::Dropout head_drop_{nullptr};
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(IceNet);

/// Builds and initializes a model. Initialization draws from torch's global generator
/// seeded with `seed`.
IceNet build_model(const ModelConfig& cfg, std::uint64_t seed = 0);

std::int64_t parameter_count(const torch::nn::Module& m);

/// Named parameters followed by named buffers, in registration order.
std::vector<std::pair<std::string, torch::Tensor>> state_tensors(const torch::nn::Module& m);
/// Deep copy of state_tensors, detached.
std::vector<std::pair<std::string, torch::Tensor>> snapshot_state(const torch::nn::Module& m);
void restore_state(torch::nn::Module& m,
                   const std::vector<std::pair<std::string, torch::Tensor>>& snapshot);

}  // namespace ice
