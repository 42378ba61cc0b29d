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

#include "ice/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

namespace ice {

RgbImage::RgbImage(std::int64_t w, std::int64_t h, Rgb fill) : width(w), height(h) {
  rgb.resize(static_cast<std::size_t>(w * h * 3));
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill[0];
    rgb[i + 1] = fill[1];
    rgb[i + 2] = fill[2];
  }
}

// ---------------------------------------------------------------------------
// 5x7 font, one byte per row, bit 4 is the leftmost column.

namespace {

struct Glyph {
  char ch;
  std::array<std::uint8_t, 7> rows;
};

constexpr Glyph kFont[] = {
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {'|', {0x04, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'?', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04}},
};

const Glyph& glyph_for(char ch) {
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  for (const auto& g : kFont)
    if (g.ch == up) return g;
  return kFont[std::size(kFont) - 1];
}

}  // namespace

void draw_text(RgbImage& img, std::int64_t x, std::int64_t y, std::string_view text, Rgb color) {
  for (char ch : text) {
    const Glyph& g = glyph_for(ch);
    for (int r = 0; r < kGlyphHeight; ++r) {
      for (int c = 0; c < kGlyphWidth; ++c) {
        if (g.rows[r] & (0x10 >> c)) img.set(x + c, y + r, color);
      }
    }
    x += kGlyphAdvance;
  }
}

std::int64_t text_width(std::string_view text) noexcept {
  return static_cast<std::int64_t>(text.size()) * kGlyphAdvance;
}

// ---------------------------------------------------------------------------
// Palette

const std::array<Rgb, 256>& gif_palette() {
  static const std::array<Rgb, 256> palette = [] {
    std::array<Rgb, 256> p{};
    for (int i = 0; i < 128; ++i) {
      const auto v = static_cast<std::uint8_t>(std::lround(i * 255.0 / 127.0));
      p[i] = {v, v, v};
    }
    static constexpr std::uint8_t kLevels[5] = {0, 64, 128, 191, 255};
    int k = 128;
    for (int r = 0; r < 5; ++r)
      for (int g = 0; g < 5; ++g)
        for (int b = 0; b < 5; ++b) p[k++] = {kLevels[r], kLevels[g], kLevels[b]};
    return p;
  }();
  return palette;
}

std::uint8_t quantize(Rgb c) noexcept {
  const int hi = std::max({c[0], c[1], c[2]});
  const int lo = std::min({c[0], c[1], c[2]});
  if (hi - lo <= 6) {
    const int avg = (c[0] + c[1] + c[2]) / 3;
    return static_cast<std::uint8_t>(std::lround(avg * 127.0 / 255.0));
  }
  auto level = [](int v) { return static_cast<int>(std::lround(v / 63.75)); };
  return static_cast<std::uint8_t>(128 + level(c[0]) * 25 + level(c[1]) * 5 + level(c[2]));
}

// ---------------------------------------------------------------------------
// Encoder

namespace {

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void write(std::uint32_t code, int bits) {
    acc_ |= static_cast<std::uint64_t>(code) << nbits_;
    nbits_ += bits;
    while (nbits_ >= 8) {
      push(static_cast<std::uint8_t>(acc_ & 0xFF));
      acc_ >>= 8;
      nbits_ -= 8;
    }
  }
  void finish() {
    if (nbits_ > 0) push(static_cast<std::uint8_t>(acc_ & 0xFF));
    acc_ = 0;
    nbits_ = 0;
    flush_block();
    out_.push_back(0);  // block terminator
  }

 private:
  void push(std::uint8_t b) {
    block_.push_back(b);
    if (block_.size() == 255) flush_block();
  }
  void flush_block() {
    if (block_.empty()) return;
    out_.push_back(static_cast<std::uint8_t>(block_.size()));
    out_.insert(out_.end(), block_.begin(), block_.end());
    block_.clear();
  }

  std::vector<std::uint8_t>& out_;
  std::vector<std::uint8_t> block_;
  std::uint64_t acc_ = 0;
  int nbits_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::int64_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

void lzw_encode(std::span<const std::uint8_t> indices, std::vector<std::uint8_t>& out) {
  constexpr int kMinCodeSize = 8;
  constexpr std::uint32_t kClear = 1u << kMinCodeSize;
  out.push_back(kMinCodeSize);
  BitWriter bits(out);
  // next_code[prefix * 256 + byte] = code, 0 when absent.
  std::vector<std::uint16_t> next_code(4096 * 256, 0);
  int code_size = kMinCodeSize + 1;
  std::uint32_t max_code = kClear + 1;
  bits.write(kClear, code_size);
  std::int32_t cur = -1;
  for (std::uint8_t v : indices) {
    if (cur < 0) {
      cur = v;
      continue;
    }
    const std::size_t slot = static_cast<std::size_t>(cur) * 256 + v;
    if (next_code[slot]) {
      cur = next_code[slot];
      continue;
    }
    bits.write(static_cast<std::uint32_t>(cur), code_size);
    next_code[slot] = static_cast<std::uint16_t>(++max_code);
    if (max_code >= (1u << code_size)) ++code_size;
    if (max_code == 4095) {
      bits.write(kClear, code_size);
      std::fill(next_code.begin(), next_code.end(), 0);
      code_size = kMinCodeSize + 1;
      max_code = kClear + 1;
    }
    cur = v;
  }
  if (cur >= 0) bits.write(static_cast<std::uint32_t>(cur), code_size);
  bits.write(kClear + 1, code_size);
  bits.finish();
}

}  // namespace

std::vector<std::uint8_t> encode_gif(std::span<const RgbImage> frames, int delay_cs) {
  if (frames.empty()) throw GifError("encode_gif: no frames");
  const std::int64_t w = frames.front().width, h = frames.front().height;
  if (w < 1 || h < 1 || w > 65535 || h > 65535) throw GifError("encode_gif: bad frame size");

  std::vector<std::uint8_t> out = {'G', 'I', 'F', '8', '9', 'a'};
  put_u16(out, w);
  put_u16(out, h);
  out.push_back(0xF7);  // global table, 8-bit color resolution, 256 entries
  out.push_back(0);
  out.push_back(0);
  for (const auto& c : gif_palette()) out.insert(out.end(), c.begin(), c.end());
  // NETSCAPE2.0 application extension: loop forever.
  const std::uint8_t loop[] = {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C', 'A', 'P', 'E',
                               '2',  '.',  '0',  0x03, 0x01, 0x00, 0x00, 0x00};
  out.insert(out.end(), std::begin(loop), std::end(loop));

  std::vector<std::uint8_t> indices(static_cast<std::size_t>(w * h));
  for (const auto& f : frames) {
    if (f.width != w || f.height != h) throw GifError("encode_gif: frames differ in size");
    out.insert(out.end(), {0x21, 0xF9, 0x04, 0x00});
    put_u16(out, delay_cs);
    out.insert(out.end(), {0x00, 0x00});
    out.push_back(0x2C);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, w);
    put_u16(out, h);
    out.push_back(0x00);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      indices[i] = quantize({f.rgb[3 * i], f.rgb[3 * i + 1], f.rgb[3 * i + 2]});
    }
    lzw_encode(indices, out);
  }
  out.push_back(0x3B);
  return out;
}

// ---------------------------------------------------------------------------
// Decoder

namespace {

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() {
    if (pos_ >= b_.size()) throw GifError("decode_gif: unexpected end of data");
    return b_[pos_++];
  }
  std::int64_t u16() {
    const std::int64_t lo = u8();
    return lo | (static_cast<std::int64_t>(u8()) << 8);
  }
  void skip(std::size_t n) {
    if (pos_ + n > b_.size()) throw GifError("decode_gif: unexpected end of data");
    pos_ += n;
  }
  std::vector<std::uint8_t> sub_blocks() {
    std::vector<std::uint8_t> data;
    for (std::uint8_t n = u8(); n != 0; n = u8()) {
      for (int i = 0; i < n; ++i) data.push_back(u8());
    }
    return data;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> lzw_decode(const std::vector<std::uint8_t>& data, int min_code_size,
                                     std::size_t expected) {
  const std::uint32_t clear = 1u << min_code_size, eoi = clear + 1;
  std::vector<std::uint16_t> prefix(4096, 0);
  std::vector<std::uint8_t> suffix(4096, 0), first(4096, 0);
  std::vector<std::uint16_t> length(4096, 0);
  for (std::uint32_t i = 0; i < clear; ++i) {
    suffix[i] = first[i] = static_cast<std::uint8_t>(i);
    length[i] = 1;
  }
  std::vector<std::uint8_t> out;
  out.reserve(expected);
  int code_size = min_code_size + 1;
  std::uint32_t next = clear + 2;
  std::int64_t prev = -1;
  std::uint64_t acc = 0;
  int nbits = 0;
  std::size_t pos = 0;
  std::vector<std::uint8_t> scratch;

  auto emit = [&](std::uint32_t code) {
    scratch.resize(length[code]);
    for (std::int64_t i = length[code] - 1; i >= 0; --i) {
      scratch[static_cast<std::size_t>(i)] = suffix[code];
      code = prefix[code];
    }
    out.insert(out.end(), scratch.begin(), scratch.end());
  };

  while (true) {
    while (nbits < code_size) {
      if (pos >= data.size()) return out;
      acc |= static_cast<std::uint64_t>(data[pos++]) << nbits;
      nbits += 8;
    }
    const auto code = static_cast<std::uint32_t>(acc & ((1u << code_size) - 1));
    acc >>= code_size;
    nbits -= code_size;

    if (code == clear) {
      code_size = min_code_size + 1;
      next = clear + 2;
      prev = -1;
      continue;
    }
    if (code == eoi) break;
    if (prev < 0) {
      if (code >= clear) throw GifError("decode_gif: bad first code");
      emit(code);
      prev = code;
      continue;
    }
    std::uint8_t head;
    if (code < next) {
      head = first[code];
    } else if (code == next) {
      head = first[prev];
    } else {
      throw GifError("decode_gif: code out of sequence");
    }
    if (next < 4096) {
      prefix[next] = static_cast<std::uint16_t>(prev);
      suffix[next] = head;
      first[next] = first[prev];
      length[next] = static_cast<std::uint16_t>(length[prev] + 1);
      ++next;
      if (next == (1u << code_size) && code_size < 12) ++code_size;
    }
    emit(code);
    prev = code;
  }
  return out;
}

}  // namespace

DecodedGif decode_gif(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  std::string sig;
  for (int i = 0; i < 6; ++i) sig.push_back(static_cast<char>(in.u8()));
  if (sig != "GIF89a" && sig != "GIF87a") throw GifError("decode_gif: not a GIF");
  DecodedGif gif;
  gif.width = in.u16();
  gif.height = in.u16();
  const std::uint8_t flags = in.u8();
  in.skip(2);
  std::vector<Rgb> global;
  if (flags & 0x80) {
    const int n = 1 << ((flags & 0x07) + 1);
    for (int i = 0; i < n; ++i) global.push_back({in.u8(), in.u8(), in.u8()});
  }
  while (true) {
    const std::uint8_t tag = in.u8();
    if (tag == 0x3B) break;
    if (tag == 0x21) {
      in.u8();  // label
      in.sub_blocks();
      continue;
    }
    if (tag != 0x2C) throw GifError("decode_gif: unknown block");
    const std::int64_t left = in.u16(), top = in.u16(), w = in.u16(), h = in.u16();
    const std::uint8_t img_flags = in.u8();
    if (img_flags & 0x40) throw GifError("decode_gif: interlaced frames are not supported");
    std::vector<Rgb> palette = global;
    if (img_flags & 0x80) {
      palette.clear();
      const int n = 1 << ((img_flags & 0x07) + 1);
      for (int i = 0; i < n; ++i) palette.push_back({in.u8(), in.u8(), in.u8()});
    }
    const int min_code_size = in.u8();
    const auto data = in.sub_blocks();
    const auto indices = lzw_decode(data, min_code_size, static_cast<std::size_t>(w * h));
    if (indices.size() < static_cast<std::size_t>(w * h)) throw GifError("decode_gif: truncated frame");
    RgbImage frame = gif.frames.empty() ? RgbImage(gif.width, gif.height) : gif.frames.back();
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const auto idx = indices[static_cast<std::size_t>(y * w + x)];
        if (idx >= palette.size()) throw GifError("decode_gif: color index out of range");
        frame.set(left + x, top + y, palette[idx]);
      }
    }
    gif.frames.push_back(std::move(frame));
  }
  return gif;
}

}  // namespace ice
