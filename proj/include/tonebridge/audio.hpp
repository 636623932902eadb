/**
 * Copyright (C) The tonebridge authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef TONEBRIDGE_AUDIO_HPP
#define TONEBRIDGE_AUDIO_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "tonebridge/digest.hpp"
#include "tonebridge/error.hpp"

namespace tonebridge {

inline constexpr std::array<int, 6> kSupportedSampleRates = {16000, 22050, 24000,
                                                             32000, 44100, 48000};

inline bool is_supported_sample_rate(int rate) {
  return std::find(kSupportedSampleRates.begin(), kSupportedSampleRates.end(), rate) !=
         kSupportedSampleRates.end();
}

/// PCM-16 audio, interleaved when stereo.
struct AudioClip {
  std::vector<std::int16_t> samples;
  int sample_rate = 32000;
  int channels = 1;

  std::size_t frame_count() const {
    return channels > 0 ? samples.size() / static_cast<std::size_t>(channels) : 0;
  }
  double duration() const {
    return sample_rate > 0 ? static_cast<double>(frame_count()) / sample_rate : 0.0;
  }
  bool operator==(const AudioClip&) const = default;
};

inline void validate(const AudioClip& clip) {
  if (!is_supported_sample_rate(clip.sample_rate))
    fail(ErrorCode::audio_decode_error,
         "unsupported sample rate " + std::to_string(clip.sample_rate));
  if (clip.channels != 1 && clip.channels != 2)
    fail(ErrorCode::audio_decode_error, "unsupported channel count " +
                                            std::to_string(clip.channels));
  if (clip.frame_count() == 0 || clip.samples.size() % clip.channels != 0)
    fail(ErrorCode::audio_decode_error, "audio has no complete frames");
}

namespace detail {

inline std::uint32_t read_le(std::span<const std::uint8_t> b, std::size_t at, int width) {
  std::uint32_t v = 0;
  for (int i = width - 1; i >= 0; --i) v = (v << 8) | b[at + i];
  return v;
}

inline void put_le(Bytes& out, std::uint32_t v, int width) {
  for (int i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::int16_t clamp_pcm16(double x) {
  double s = std::round(x * 32767.0);
  return static_cast<std::int16_t>(std::clamp(s, -32768.0, 32767.0));
}

}  // namespace detail

/// Parses RIFF/WAVE. Accepts integer PCM (8/16/24/32 bit) and 32-bit float,
/// converting everything to PCM-16.
inline AudioClip decode_wav(std::span<const std::uint8_t> wav) {
  using detail::read_le;
  auto bad = [](const std::string& why) { fail(ErrorCode::audio_decode_error, why); };
  if (wav.size() < 12 || std::memcmp(wav.data(), "RIFF", 4) != 0 ||
      std::memcmp(wav.data() + 8, "WAVE", 4) != 0)
    bad("not a RIFF/WAVE payload");

  int format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= wav.size()) {
    std::uint32_t size = read_le(wav, pos + 4, 4);
    std::size_t body = pos + 8;
    if (size > wav.size() - body) bad("chunk overruns payload (truncated WAV)");
    if (std::memcmp(wav.data() + pos, "fmt ", 4) == 0) {
      if (size < 16) bad("fmt chunk too small");
      format = static_cast<int>(read_le(wav, body, 2));
      channels = static_cast<int>(read_le(wav, body + 2, 2));
      rate = read_le(wav, body + 4, 4);
      bits = static_cast<int>(read_le(wav, body + 14, 2));
      if (format == 0xFFFE) {
        if (size < 40) bad("extensible fmt chunk too small");
        format = static_cast<int>(read_le(wav, body + 24, 2));
      }
      have_fmt = true;
    } else if (std::memcmp(wav.data() + pos, "data", 4) == 0) {
      data = wav.subspan(body, size);
      have_data = true;
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt) bad("missing fmt chunk");
  if (!have_data) bad("missing data chunk");
  if (channels != 1 && channels != 2) bad("unsupported channel count " + std::to_string(channels));

  bool is_float = format == 3;
  if (!(format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32)) &&
      !(is_float && bits == 32))
    bad("unsupported sample format " + std::to_string(format) + "/" + std::to_string(bits));

  std::size_t width = static_cast<std::size_t>(bits / 8);
  std::size_t frame_bytes = width * static_cast<std::size_t>(channels);
  if (data.size() % frame_bytes != 0) bad("data chunk is not a whole number of frames");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.channels = channels;
  clip.samples.reserve(data.size() / width);
  for (std::size_t at = 0; at < data.size(); at += width) {
    std::int16_t s = 0;
    switch (bits) {
      case 8: s = static_cast<std::int16_t>((static_cast<int>(data[at]) - 128) << 8); break;
      case 16: s = static_cast<std::int16_t>(read_le(data, at, 2)); break;
      case 24: s = static_cast<std::int16_t>(static_cast<std::int32_t>(read_le(data, at, 3) << 8) >> 16); break;
      case 32:
        if (is_float) {
          std::uint32_t raw = read_le(data, at, 4);
          float f;
          std::memcpy(&f, &raw, sizeof f);
          if (!std::isfinite(f)) bad("non-finite float sample");
          s = detail::clamp_pcm16(f);
        } else {
          s = static_cast<std::int16_t>(static_cast<std::int32_t>(read_le(data, at, 4)) >> 16);
        }
        break;
    }
    clip.samples.push_back(s);
  }
  validate(clip);
  return clip;
}

/// Canonical RIFF/WAVE PCM-16 serialization.
inline Bytes encode_wav(const AudioClip& clip) {
  validate(clip);
  using detail::put_le;
  std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  Bytes out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_le(out, 36 + data_bytes, 4);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_le(out, 16, 4);
  put_le(out, 1, 2);
  put_le(out, static_cast<std::uint32_t>(clip.channels), 2);
  put_le(out, static_cast<std::uint32_t>(clip.sample_rate), 4);
  put_le(out, static_cast<std::uint32_t>(clip.sample_rate * clip.channels * 2), 4);
  put_le(out, static_cast<std::uint32_t>(clip.channels * 2), 2);
  put_le(out, 16, 2);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_le(out, data_bytes, 4);
  for (auto s : clip.samples) put_le(out, static_cast<std::uint16_t>(s), 2);
  return out;
}

/// Mono sine, amplitude 0.5.
inline AudioClip sine_clip(double frequency_hz, double duration_s, int sample_rate) {
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.channels = 1;
  auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  clip.samples.resize(n);
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (std::size_t i = 0; i < n; ++i)
    clip.samples[i] = detail::clamp_pcm16(0.5 * std::sin(two_pi * frequency_hz * static_cast<double>(i) / sample_rate));
  return clip;
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_AUDIO_HPP
