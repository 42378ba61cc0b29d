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

#include "ice/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>


namespace ice {

namespace {

constexpr char kMagic[8] = {'I', 'C', 'E', 'C', 'K', 'P', 'T', '1'};

std::uint64_t fnv1a_bytes(const std::vector<char>& bytes, std::size_t n) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001B3ULL;
  }
  return h;
}

const char* dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: return nullptr;
  }
}

torch::ScalarType dtype_from_name(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  if (s == "u8") return torch::kUInt8;
  throw CheckpointError("unsupported dtype '" + s + "'");
}

void put_u64(std::vector<char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::vector<char>& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

const torch::Tensor* TensorArchive::find(const std::string& name) const noexcept {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void write_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  nlohmann::json index = nlohmann::json::array();
  std::vector<char> payload;
  for (const auto& [name, tensor] : archive.tensors) {
    const torch::Tensor t = tensor.detach().to(torch::kCPU).contiguous();
    const char* dtype = dtype_name(t.scalar_type());
    if (!dtype) throw CheckpointError("tensor '" + name + "' has an unsupported dtype");
    const auto nbytes = static_cast<std::size_t>(t.numel()) * t.element_size();
    index.push_back({{"name", name},
                     {"dtype", dtype},
                     {"shape", t.sizes().vec()},
                     {"offset", payload.size()},
                     {"nbytes", nbytes}});
    const char* src = static_cast<const char*>(t.data_ptr());
    payload.insert(payload.end(), src, src + nbytes);
  }
  const std::string header = nlohmann::json{{"meta", archive.meta}, {"tensors", index}}.dump();

  std::vector<char> bytes(std::begin(kMagic), std::end(kMagic));
  put_u64(bytes, header.size());
  bytes.insert(bytes.end(), header.begin(), header.end());
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  put_u64(bytes, fnv1a_bytes(bytes, bytes.size()));

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive read_tensor_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw CheckpointError(path.string() + ": not a tensor archive");
  }
  const std::size_t body = bytes.size() - 8;
  if (get_u64(bytes, body) != fnv1a_bytes(bytes, body)) {
    throw CheckpointError(path.string() + ": checksum mismatch (file corrupt)");
  }
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (16 + header_len > body) throw CheckpointError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  const std::size_t payload = 16 + header_len;

  TensorArchive archive;
  archive.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto nbytes = entry.at("nbytes").get<std::size_t>();
    torch::Tensor t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::size_t>(t.numel()) * t.element_size() != nbytes || payload + offset + nbytes > body) {
      throw CheckpointError(path.string() + ": inconsistent extent for '" +
                            entry.at("name").get<std::string>() + "'");
    }
    std::memcpy(t.data_ptr(), bytes.data() + payload + offset, nbytes);
    archive.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return archive;
}

void save_checkpoint(const std::filesystem::path& path, IceNet& model, const CheckpointMeta& meta) {
  TensorArchive archive;
  archive.meta = {{"config", to_json(meta.config)},
                  {"epoch", meta.epoch},
                  {"val_accuracy", meta.val_accuracy},
                  {"metrics", meta.metrics}};
  archive.tensors = state_tensors(*model);
  if (!meta.rng_state.empty()) {
    archive.tensors.emplace_back(
        "__rng_state__",
        torch::from_blob(const_cast<std::uint8_t*>(meta.rng_state.data()),
                         {static_cast<std::int64_t>(meta.rng_state.size())}, torch::kUInt8)
            .clone());
  }
  write_tensor_archive(path, archive);
}

std::pair<IceNet, CheckpointMeta> load_checkpoint(const std::filesystem::path& path,
                                                  const ModelConfig* expected) {
  const TensorArchive archive = read_tensor_archive(path);
  CheckpointMeta meta;
  try {
    meta.config = model_config_from_json(archive.meta.at("config"));
    meta.epoch = archive.meta.at("epoch").get<int>();
    meta.val_accuracy = archive.meta.at("val_accuracy").get<double>();
    meta.metrics = archive.meta.value("metrics", nlohmann::json::object());
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": bad metadata: " + e.what());
  }
  if (expected) {
    ModelConfig want = *expected, have = meta.config;
    // The pretrained hook only affects initialization, not the parameter layout.
    want.pretrained_weights_path.clear();
    have.pretrained_weights_path.clear();
    if (!(want == have)) {
      throw CheckpointError(path.string() + ": model config differs from the requested one");
    }
  }
  if (const auto* rng = archive.find("__rng_state__")) {
    const auto* p = rng->data_ptr<std::uint8_t>();
    meta.rng_state.assign(p, p + rng->numel());
  }

  ModelConfig build_cfg = meta.config;
  build_cfg.pretrained_weights_path.clear();
  IceNet model(build_cfg);
  torch::NoGradGuard no_grad;
  for (auto& [name, tensor] : state_tensors(*model)) {
    const torch::Tensor* src = archive.find(name);
    if (!src || src->sizes() != tensor.sizes() || src->scalar_type() != tensor.scalar_type()) {
      throw CheckpointError(path.string() + ": tensor '" + name + "' missing or mismatched");
    }
    tensor.copy_(*src);
  }
  return {model, meta};
}

}  // namespace ice
