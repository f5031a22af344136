// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dryflow/audio/waveform.hpp"
#include "dryflow/error.hpp"

namespace dryflow {

enum class WavEncoding { pcm16, float32 };

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

/// Parses a RIFF/WAVE byte buffer. Multi-channel input is averaged to mono.
inline Waveform decode_wav(const std::vector<unsigned char>& bytes, const std::string& origin = "<buffer>") {
  using detail::read_u16;
  using detail::read_u32;
  auto bad = [&](const char* why) { fail(ErrorKind::data, origin, ": ", why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    bad("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t len = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size() && std::memcmp(hdr, "data", 4) != 0) bad("truncated chunk");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16) bad("short fmt chunk");
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && len >= 26) format = read_u16(bytes.data() + body + 24);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = std::min<std::size_t>(len, bytes.size() - body);
    }
    pos = body + len + (len & 1u);
  }
  if (channels == 0 || rate == 0) bad("missing fmt chunk");
  if (data == nullptr) bad("missing data chunk");

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) bad("unsupported encoding (need 16-bit PCM or 32-bit float)");

  const std::size_t bytes_per = bits / 8;
  const std::size_t frames = data_len / (bytes_per * channels);
  std::vector<double> out(frames, 0.0);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per;
      if (pcm16) {
        acc += static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else {
        std::uint32_t raw = read_u32(p);
        float f;
        std::memcpy(&f, &raw, 4);
        acc += f;
      }
    }
    out[i] = acc / channels;
  }
  Waveform wav(std::move(out), static_cast<int>(rate));
  validate(wav);
  return wav;
}

inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::data, "cannot open WAV file ", path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string());
}

/// Serializes mono audio. PCM16 clamps to [-1, 1) before quantization.
inline std::string encode_wav(const Waveform& wav, WavEncoding enc) {
  using detail::put_u16;
  using detail::put_u32;
  const bool f32 = enc == WavEncoding::float32;
  const std::uint16_t bits = f32 ? 32 : 16;
  const std::uint32_t data_len = static_cast<std::uint32_t>(wav.size() * (bits / 8));
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, f32 ? 3 : 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(wav.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(wav.sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_len);
  for (double v : wav.samples) {
    if (f32) {
      const float f = static_cast<float>(v);
      std::uint32_t raw;
      std::memcpy(&raw, &f, 4);
      put_u32(out, raw);
    } else {
      const double c = std::clamp(v, -1.0, 32767.0 / 32768.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
    }
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, const Waveform& wav,
                      WavEncoding enc = WavEncoding::float32) {
  validate(wav);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::data, "cannot write WAV file ", path.string());
  const std::string bytes = encode_wav(wav, enc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::data, "write failed for ", path.string());
}

}  // namespace dryflow
