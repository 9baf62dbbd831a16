// Copyright 2026 The emoctc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal RIFF/WAVE reader and writer for 16-bit PCM.

#ifndef EMOCTC_WAV_HPP_
#define EMOCTC_WAV_HPP_

#include "emoctc/common.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace emoctc::wav {

struct Audio {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  std::vector<int16_t> samples;  // interleaved if channels > 1
};

namespace detail {

inline uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace detail

inline Audio decode(std::span<const unsigned char> bytes) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorCode::kParseError, "not a RIFF/WAVE stream");
  }
  Audio audio;
  bool have_fmt = false;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Tolerate a truncated trailing data chunk, as some recorders write it.
      if (std::memcmp(chunk, "data", 4) != 0) throw Error(ErrorCode::kParseError, "chunk overruns file");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw Error(ErrorCode::kParseError, "short fmt chunk");
      uint16_t format = read_u16(chunk + 8);
      audio.channels = read_u16(chunk + 10);
      audio.sample_rate = static_cast<int>(read_u32(chunk + 12));
      audio.bits_per_sample = read_u16(chunk + 22);
      if (format == 0xFFFE && avail >= 26) format = read_u16(chunk + 32);
      if (format != 1) throw Error(ErrorCode::kParseError, "only PCM WAV is supported");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw Error(ErrorCode::kParseError, "data chunk before fmt chunk");
      if (audio.bits_per_sample != 16) throw Error(ErrorCode::kParseError, "only 16-bit PCM is supported");
      audio.samples.resize(avail / 2);
      for (std::size_t i = 0; i < audio.samples.size(); ++i) {
        audio.samples[i] = static_cast<int16_t>(read_u16(chunk + 8 + 2 * i));
      }
      have_data = true;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt || !have_data) throw Error(ErrorCode::kParseError, "missing fmt or data chunk");
  return audio;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline Audio read(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  try {
    return decode({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// Mono 16-bit PCM.
inline std::string encode(std::span<const int16_t> samples, int sample_rate) {
  std::string out;
  const auto data_bytes = static_cast<uint32_t>(samples.size() * 2);
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<uint32_t>(sample_rate));
  detail::put_u32(out, static_cast<uint32_t>(sample_rate * 2));
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (int16_t s : samples) detail::put_u16(out, static_cast<uint16_t>(s));
  return out;
}

inline void write(const std::filesystem::path& path, std::span<const int16_t> samples, int sample_rate) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  const std::string bytes = encode(samples, sample_rate);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

}  // namespace emoctc::wav

#endif  // EMOCTC_WAV_HPP_
