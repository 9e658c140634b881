// Copyright (c) 2026 The avtts Authors
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

// 16-bit PCM mono RIFF/WAVE reader and writer.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace avtts {

class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t read_le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_le16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

inline void put_le32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_le16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v));
  b.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace detail

struct WavData {
  int sample_rate = 0;
  std::vector<float> samples;  // [-1, 1)
};

inline WavData decode_wav(const std::vector<unsigned char>& bytes, const std::string& what = "wav") {
  using detail::read_le16;
  using detail::read_le32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw WavError(what + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  WavData out;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = read_le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw WavError(what + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw WavError(what + ": short fmt chunk");
      const unsigned char* f = bytes.data() + body;
      const auto format = read_le16(f), channels = read_le16(f + 2), bits = read_le16(f + 14);
      out.sample_rate = static_cast<int>(read_le32(f + 4));
      if (format != 1 || bits != 16) throw WavError(what + ": only 16-bit PCM is supported");
      if (channels != 1) throw WavError(what + ": only mono audio is supported, got " + std::to_string(channels) + " channels");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw WavError(what + ": data chunk before fmt chunk");
      out.samples.resize(len / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i)
        out.samples[i] = static_cast<float>(static_cast<std::int16_t>(read_le16(bytes.data() + body + 2 * i))) / 32768.0f;
      return out;
    }
    pos = body + len + (len & 1);
  }
  throw WavError(what + ": no data chunk");
}

inline std::vector<unsigned char> encode_wav(const std::vector<float>& samples, int sample_rate) {
  std::vector<unsigned char> b;
  const auto data_len = static_cast<std::uint32_t>(samples.size() * 2);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  detail::put_le32(b, 36 + data_len);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_le32(b, 16);
  detail::put_le16(b, 1);
  detail::put_le16(b, 1);
  detail::put_le32(b, static_cast<std::uint32_t>(sample_rate));
  detail::put_le32(b, static_cast<std::uint32_t>(sample_rate * 2));
  detail::put_le16(b, 2);
  detail::put_le16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  detail::put_le32(b, data_len);
  for (float s : samples) {
    const long q = std::lround(std::clamp(double(s), -1.0, 32767.0 / 32768.0) * 32768.0);
    detail::put_le16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return b;
}

// Reads a WAV file and rejects any sample rate other than `expected_rate`.
inline std::vector<float> read_wav(const std::string& path, int expected_rate) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw WavError("cannot open wav: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  WavData w = decode_wav(bytes, path);
  if (w.sample_rate != expected_rate)
    throw WavError(path + ": sample rate " + std::to_string(w.sample_rate) + " Hz, expected " +
                   std::to_string(expected_rate) + " Hz (resampling is not supported)");
  return std::move(w.samples);
}

inline void write_wav(const std::string& path, const std::vector<float>& samples, int sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw WavError("cannot write wav: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw WavError("short write: " + path);
}

// Rounds samples to the 16-bit grid, as a write/read cycle would.
inline std::vector<float> quantize_pcm16(const std::vector<float>& samples) {
  std::vector<float> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    out[i] = static_cast<float>(std::lround(std::clamp(double(samples[i]), -1.0, 32767.0 / 32768.0) * 32768.0)) /
             32768.0f;
  return out;
}

}  // namespace avtts
