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
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "ice/model.hpp"
#include "json.hpp"

namespace ice {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named tensors plus a JSON metadata document.
///
/// On-disk layout (little endian):
///   "ICECKPT1" | u64 header length | header JSON | tensor payload | u64 FNV-1a of all
///   preceding bytes.
/// The header holds {"meta": ..., "tensors": [{"name", "dtype", "shape", "offset",
/// "nbytes"}]}; offsets are relative to the start of the payload. Supported dtypes are
/// f32, f64, i64 and u8.
struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(const std::string& name) const noexcept;
};

void write_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_tensor_archive(const std::filesystem::path& path);

struct CheckpointMeta {
  ModelConfig config;
  int epoch = 0;
  double val_accuracy = 0.0;
  nlohmann::json metrics = nlohmann::json::object();
  /// Serialized state of torch's default CPU generator at save time.
  std::vector<std::uint8_t> rng_state;
};

void save_checkpoint(const std::filesystem::path& path, IceNet& model, const CheckpointMeta& meta);

/// Loads a checkpoint. When `expected` is given the stored ModelConfig must equal it.
std::pair<IceNet, CheckpointMeta> load_checkpoint(const std::filesystem::path& path,
                                                  const ModelConfig* expected = nullptr);

}  // namespace ice
