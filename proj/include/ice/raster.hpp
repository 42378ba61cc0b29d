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
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace ice {

using Rgb = std::array<std::uint8_t, 3>;

struct RgbImage {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(std::int64_t w, std::int64_t h, Rgb fill = {0, 0, 0});

  Rgb pixel(std::int64_t x, std::int64_t y) const noexcept {
    const auto* p = &rgb[static_cast<std::size_t>((y * width + x) * 3)];
    return {p[0], p[1], p[2]};
  }
  void set(std::int64_t x, std::int64_t y, Rgb c) noexcept {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    auto* p = &rgb[static_cast<std::size_t>((y * width + x) * 3)];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  bool operator==(const RgbImage&) const = default;
};

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kGlyphAdvance = 6;

/// Draws `text` with the built-in 5x7 font; lowercase renders as uppercase and unknown
/// characters as '?'. Pixels outside the image are clipped.
void draw_text(RgbImage& img, std::int64_t x, std::int64_t y, std::string_view text, Rgb color);
std::int64_t text_width(std::string_view text) noexcept;

class GifError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed 256-entry palette: a 128-level gray ramp followed by a 5x5x5 color cube.
const std::array<Rgb, 256>& gif_palette();
std::uint8_t quantize(Rgb c) noexcept;

/// Looping animated GIF89a; all frames must share one size. `delay_cs` is in 1/100 s.
std::vector<std::uint8_t> encode_gif(std::span<const RgbImage> frames, int delay_cs = 10);

struct DecodedGif {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<RgbImage> frames;
};

/// Decodes full-frame GIFs such as those written by encode_gif.
DecodedGif decode_gif(std::span<const std::uint8_t> bytes);

}  // namespace ice
