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
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ice {

/// Dense single-channel video volume stored frame-major as (T, H, W).
///
/// The channel axis is implicit: every clip in this project is grayscale, so
/// the logical tensor shape is (1, T, H, W).
template <typename T>
class Video {
 public:
  using value_type = T;

  Video() = default;
  Video(std::int64_t frames, std::int64_t rows, std::int64_t cols, T fill = T{})
      : frames_(frames), rows_(rows), cols_(cols) {
    if (frames < 0 || rows < 0 || cols < 0) {
      throw std::invalid_argument("Video: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(frames * rows * cols), fill);
  }

  std::int64_t frames() const noexcept { return frames_; }
  std::int64_t rows() const noexcept { return rows_; }
  std::int64_t cols() const noexcept { return cols_; }
  std::int64_t frame_size() const noexcept { return rows_ * cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Logical (C, T, H, W) shape with C = 1.
  std::array<std::int64_t, 4> shape() const noexcept { return {1, frames_, rows_, cols_}; }

  T& at(std::int64_t t, std::int64_t r, std::int64_t c) noexcept {
    return data_[static_cast<std::size_t>((t * rows_ + r) * cols_ + c)];
  }
  const T& at(std::int64_t t, std::int64_t r, std::int64_t c) const noexcept {
    return data_[static_cast<std::size_t>((t * rows_ + r) * cols_ + c)];
  }

  std::span<T> frame(std::int64_t t) noexcept {
    return {data_.data() + t * frame_size(), static_cast<std::size_t>(frame_size())};
  }
  std::span<const T> frame(std::int64_t t) const noexcept {
    return {data_.data() + t * frame_size(), static_cast<std::size_t>(frame_size())};
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  bool operator==(const Video&) const = default;

 private:
  std::int64_t frames_ = 0;
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<T> data_;
};

/// Raw 8-bit intensities as stored on disk.
using RawVideo = Video<std::uint8_t>;

/// Normalized heartbeat clip, values in [0, 1].
using VideoTensor = Video<float>;

/// Binary (0/1) image mask, row-major.
struct Mask {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t operator()(std::int64_t r, std::int64_t c) const noexcept {
    return bits[static_cast<std::size_t>(r * cols + c)];
  }
  std::size_t count() const noexcept;
  bool operator==(const Mask&) const = default;
};

inline std::size_t Mask::count() const noexcept {
  std::size_t n = 0;
  for (auto b : bits) n += b ? 1 : 0;
  return n;
}

}  // namespace ice
