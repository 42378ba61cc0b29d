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

#include "ice/model.hpp"

#include <algorithm>
#include <sstream>

#include "ice/checkpoint.hpp"

namespace ice {

namespace nn = torch::nn;

std::array<std::int64_t, 4> ModelConfig::stage_channels() const noexcept {
  const std::int64_t s = width_scale();
  return {64 / s, 128 / s, 256 / s, 512 / s};
}

void ModelConfig::validate() const {
  if (in_channels != 1) throw std::invalid_argument("model: in_channels must be 1");
  if (n_classes != 3) throw std::invalid_argument("model: n_classes must be 3");
  if (width_divisor < 1 || 64 % width_divisor != 0) {
    throw std::invalid_argument("model: width_divisor must divide 64");
  }
  if (adapter_channels < 1 || stem_channels() < 1) throw std::invalid_argument("model: adapter_channels");
  for (int i = 0; i < 3; ++i) {
    if (adapter_kernel[i] < 1 || adapter_stride[i] < 1 || adapter_padding[i] < 0) {
      throw std::invalid_argument("model: adapter kernel/stride/padding out of range");
    }
  }
  if (!(adapter_dropout >= 0 && adapter_dropout < 1) || !(head_dropout >= 0 && head_dropout < 1)) {
    throw std::invalid_argument("model: dropout probabilities must lie in [0, 1)");
  }
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"in_channels", cfg.in_channels},
          {"adapter_channels", cfg.adapter_channels},
          {"adapter_kernel", cfg.adapter_kernel},
          {"adapter_stride", cfg.adapter_stride},
          {"adapter_padding", cfg.adapter_padding},
          {"adapter_dropout", cfg.adapter_dropout},
          {"head_dropout", cfg.head_dropout},
          {"n_classes", cfg.n_classes},
          {"backbone", cfg.backbone == Backbone::Full ? "full_r3d18" : "reduced"},
          {"width_divisor", cfg.width_divisor},
          {"pretrained_weights_path", cfg.pretrained_weights_path}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.adapter_channels = j.value("adapter_channels", c.adapter_channels);
  c.adapter_kernel = j.value("adapter_kernel", c.adapter_kernel);
  c.adapter_stride = j.value("adapter_stride", c.adapter_stride);
  c.adapter_padding = j.value("adapter_padding", c.adapter_padding);
  c.adapter_dropout = j.value("adapter_dropout", c.adapter_dropout);
  c.head_dropout = j.value("head_dropout", c.head_dropout);
  c.n_classes = j.value("n_classes", c.n_classes);
  const std::string backbone = j.value("backbone", std::string("full_r3d18"));
  if (backbone == "full_r3d18" || backbone == "full") {
    c.backbone = Backbone::Full;
  } else if (backbone == "reduced") {
    c.backbone = Backbone::Reduced;
  } else {
    throw std::invalid_argument("model.backbone: expected full_r3d18 or reduced, got " + backbone);
  }
  c.width_divisor = j.value("width_divisor", c.width_divisor);
  c.pretrained_weights_path = j.value("pretrained_weights_path", std::string{});
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

BasicBlock3dImpl::BasicBlock3dImpl(std::int64_t in_planes, std::int64_t planes, std::int64_t stride) {
  conv1_ = register_module(
      "conv1", nn::Sequential(nn::Conv3d(nn::Conv3dOptions(in_planes, planes, 3).stride(stride).padding(1).bias(false)),
                              nn::BatchNorm3d(nn::BatchNorm3dOptions(planes).eps(1e-5).momentum(0.1)),
                              nn::ReLU(nn::ReLUOptions(true))));
  conv2_ = register_module(
      "conv2", nn::Sequential(nn::Conv3d(nn::Conv3dOptions(planes, planes, 3).stride(1).padding(1).bias(false)),
                              nn::BatchNorm3d(nn::BatchNorm3dOptions(planes).eps(1e-5).momentum(0.1))));
  if (stride != 1 || in_planes != planes) {
    downsample_ = register_module(
        "downsample",
        nn::Sequential(nn::Conv3d(nn::Conv3dOptions(in_planes, planes, 1).stride(stride).bias(false)),
                       nn::BatchNorm3d(nn::BatchNorm3dOptions(planes).eps(1e-5).momentum(0.1))));
  }
}

torch::Tensor BasicBlock3dImpl::forward(const torch::Tensor& x, const std::string& tap,
                                        torch::Tensor* tapped) {
  auto conv_bn = [&](nn::Sequential& seq, const torch::Tensor& in, const char* name) {
    torch::Tensor y = seq[0]->as<nn::Conv3d>()->forward(in);
    if (tapped && tap == name) *tapped = y;
    y = seq[1]->as<nn::BatchNorm3d>()->forward(y);
    return y;
  };
  torch::Tensor out = torch::relu(conv_bn(conv1_, x, "conv1"));
  out = conv_bn(conv2_, out, "conv2");
  torch::Tensor identity = downsample_.is_empty() ? x : conv_bn(downsample_, x, "downsample");
  return torch::relu(out + identity);
}

IceNetImpl::IceNetImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto stages = cfg_.stage_channels();
  const std::int64_t stem = cfg_.stem_channels();
  adapter_conv_ = nn::Conv3d(nn::Conv3dOptions(cfg_.in_channels, stem,
                                               {cfg_.adapter_kernel[0], cfg_.adapter_kernel[1], cfg_.adapter_kernel[2]})
                                 .stride({cfg_.adapter_stride[0], cfg_.adapter_stride[1], cfg_.adapter_stride[2]})
                                 .padding({cfg_.adapter_padding[0], cfg_.adapter_padding[1], cfg_.adapter_padding[2]})
                                 .bias(false));
  adapter_bn_ = nn::BatchNorm3d(nn::BatchNorm3dOptions(stem).eps(1e-5).momentum(0.1));
  adapter_drop_ = nn::Dropout3d(nn::Dropout3dOptions(cfg_.adapter_dropout));
  register_module("adapter", nn::Sequential(adapter_conv_, adapter_bn_, adapter_drop_));

  std::int64_t in_planes = stem;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t stride = s == 0 ? 1 : 2;
    nn::Sequential layer(BasicBlock3d(in_planes, stages[s], stride), BasicBlock3d(stages[s], stages[s], 1));
    layers_[s] = register_module("layer" + std::to_string(s + 1), layer);
    in_planes = stages[s];
  }
  head_drop_ = register_module("head_dropout", nn::Dropout(nn::DropoutOptions(cfg_.head_dropout)));
  fc_ = register_module("fc", nn::Linear(stages[3], cfg_.n_classes));
}

std::vector<std::array<std::int64_t, 3>> IceNetImpl::feature_shapes(const ModelConfig& cfg,
                                                                    std::array<std::int64_t, 3> input) {
  std::vector<std::array<std::int64_t, 3>> shapes;
  std::array<std::int64_t, 3> cur{};
  static constexpr const char* kAxis[3] = {"T", "H", "W"};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t span = input[a] + 2 * cfg.adapter_padding[a] - cfg.adapter_kernel[a];
    if (input[a] < 1 || span < 0) {
      throw ShapeError(std::string("input axis ") + kAxis[a] + "=" + std::to_string(input[a]) +
                       " collapses under the adapter kernel");
    }
    cur[a] = span / cfg.adapter_stride[a] + 1;
  }
  shapes.push_back(cur);
  shapes.push_back(cur);  // layer1 keeps resolution
  for (int s = 1; s < 4; ++s) {
    for (auto& d : cur) d = (d - 1) / 2 + 1;
    shapes.push_back(cur);
  }
  return shapes;
}

torch::Tensor IceNetImpl::run(const torch::Tensor& x, const std::string& tap, torch::Tensor* tapped) {
  if (x.dim() != 5 || x.size(1) != cfg_.in_channels) {
    std::ostringstream msg;
    msg << "expected input (B, 1, T, H, W), got " << x.sizes();
    throw ShapeError(msg.str());
  }
  feature_shapes(cfg_, {x.size(2), x.size(3), x.size(4)});

  torch::Tensor h = adapter_conv_->forward(x);
  if (tapped && tap == "adapter") *tapped = h;
  h = adapter_drop_->forward(adapter_bn_->forward(h));
  for (int s = 0; s < 4; ++s) {
    const std::string prefix = "layer" + std::to_string(s + 1) + ".";
    for (std::size_t b = 0; b < layers_[s]->size(); ++b) {
      const std::string block_prefix = prefix + std::to_string(b) + ".";
      std::string local;
      if (tapped && tap.rfind(block_prefix, 0) == 0) local = tap.substr(block_prefix.size());
      h = layers_[s][b]->as<BasicBlock3d>()->forward(h, local, local.empty() ? nullptr : tapped);
    }
  }
  h = torch::adaptive_avg_pool3d(h, {1, 1, 1}).flatten(1);
  return fc_->forward(head_drop_->forward(h));
}

torch::Tensor IceNetImpl::forward(const torch::Tensor& x) { return run(x, {}, nullptr); }

TappedForward IceNetImpl::forward_tapped(const torch::Tensor& x, const std::string& layer) {
  const auto names = conv_layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    throw std::invalid_argument("'" + layer + "' is not a volumetric convolution of this model");
  }
  TappedForward out;
  out.logits = run(x, layer, &out.activation);
  return out;
}

std::vector<std::string> IceNetImpl::conv_layer_names() const {
  std::vector<std::string> names{"adapter"};
  for (int s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < layers_[s]->size(); ++b) {
      const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
      names.push_back(p + "conv1");
      names.push_back(p + "conv2");
      if (layers_[s]->ptr(b)->as<BasicBlock3dImpl>()->has_downsample()) names.push_back(p + "downsample");
    }
  }
  return names;
}

void IceNetImpl::load_backbone(const std::string& path) {
  const TensorArchive archive = read_tensor_archive(path);
  std::vector<std::string> problems;
  std::vector<std::pair<torch::Tensor, const torch::Tensor*>> copies;
  for (auto& [name, tensor] : state_tensors(*this)) {
    if (name.rfind("layer", 0) != 0) continue;
    const torch::Tensor* src = archive.find(name);
    if (!src) {
      problems.push_back(name + " (missing)");
    } else if (src->sizes() != tensor.sizes()) {
      std::ostringstream msg;
      msg << name << " (expected " << tensor.sizes() << ", file has " << src->sizes() << ")";
      problems.push_back(msg.str());
    } else {
      copies.emplace_back(tensor, src);
    }
  }
  if (!problems.empty()) {
    std::string msg = "incompatible backbone weights in " + path + ":";
    for (const auto& p : problems) msg += "\n  " + p;
    throw WeightLoadError(msg);
  }
  torch::NoGradGuard no_grad;
  for (auto& [dst, src] : copies) dst.copy_(src->to(dst.dtype()));
}

IceNet build_model(const ModelConfig& cfg, std::uint64_t seed) {
  torch::manual_seed(seed);
  IceNet model(cfg);
  torch::NoGradGuard no_grad;
  for (auto& m : model->modules(/*include_self=*/false)) {
    if (auto* conv = m->as<nn::Conv3d>()) {
      nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
    } else if (auto* bn = m->as<nn::BatchNorm3d>()) {
      nn::init::ones_(bn->weight);
      nn::init::zeros_(bn->bias);
    }
  }
  nn::init::zeros_(model->fc()->bias);
  if (!cfg.pretrained_weights_path.empty()) model->load_backbone(cfg.pretrained_weights_path);
  return model;
}

std::int64_t parameter_count(const torch::nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

std::vector<std::pair<std::string, torch::Tensor>> state_tensors(const torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : m.named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : m.named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> snapshot_state(const torch::nn::Module& m) {
  auto out = state_tensors(m);
  for (auto& [name, t] : out) t = t.detach().clone();
  return out;
}

void restore_state(torch::nn::Module& m,
                   const std::vector<std::pair<std::string, torch::Tensor>>& snapshot) {
  auto current = state_tensors(m);
  if (current.size() != snapshot.size()) throw std::invalid_argument("restore_state: layout mismatch");
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < current.size(); ++i) {
    if (current[i].first != snapshot[i].first || current[i].second.sizes() != snapshot[i].second.sizes()) {
      throw std::invalid_argument("restore_state: mismatch at " + current[i].first);
    }
    current[i].second.copy_(snapshot[i].second);
  }
}

}  // namespace ice
