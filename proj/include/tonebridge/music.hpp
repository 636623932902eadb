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
#ifndef TONEBRIDGE_MUSIC_HPP
#define TONEBRIDGE_MUSIC_HPP

#include <cmath>

#include "tonebridge/audio.hpp"
#include "tonebridge/backends.hpp"
#include "tonebridge/captioning.hpp"
#include "tonebridge/prompt_bridge.hpp"

namespace tonebridge {

inline constexpr double kDurationTolerance = 0.10;

/// Calls the music backend and normalizes its reply to a PCM-16 clip.
inline AudioClip generate_music(const MusicPrompt& prompt, double duration_s, const MusicBackend& backend) {
  require(!is_blank(prompt.text), "music prompt must be non-blank");
  require(duration_s > 0.0 && std::isfinite(duration_s), "duration must be positive");
  auto payload = backend.generate(prompt.text, duration_s);
  AudioClip clip = decode_wav(payload.wav);
  if (payload.sample_rate != clip.sample_rate)
    fail(ErrorCode::audio_decode_error, "reported sample rate " + std::to_string(payload.sample_rate) +
                                            " differs from WAV header " + std::to_string(clip.sample_rate));
  // A backend that echoes duration_s claims to honor the request.
  if (payload.duration_s) {
    auto off = [&](double d) { return std::abs(d - duration_s) > kDurationTolerance * duration_s; };
    if (off(*payload.duration_s) || off(clip.duration()))
      throw BackendError::malformed("music duration " + std::to_string(clip.duration()) +
                                    " s is not within 10% of requested " + std::to_string(duration_s) + " s");
  }
  return clip;
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_MUSIC_HPP
