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
#ifndef TONEBRIDGE_ERROR_HPP
#define TONEBRIDGE_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace tonebridge {

enum class ErrorCode {
  invalid_argument,
  backend_unavailable,
  decode_error,
  audio_decode_error,
  empty_caption,
  dimension_mismatch,
  insufficient_samples,
  not_symmetric,
  label_mismatch,
  zero_vector,
  missing_similarity,
  invalid_manifest,
  not_found,
  invalid_state,
  payload_too_large,
  unsupported_media,
  config_error,
  io_error,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::backend_unavailable: return "BackendUnavailable";
    case ErrorCode::decode_error: return "DecodeError";
    case ErrorCode::audio_decode_error: return "AudioDecodeError";
    case ErrorCode::empty_caption: return "EmptyCaption";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::insufficient_samples: return "InsufficientSamples";
    case ErrorCode::not_symmetric: return "NotSymmetric";
    case ErrorCode::label_mismatch: return "LabelMismatch";
    case ErrorCode::zero_vector: return "ZeroVector";
    case ErrorCode::missing_similarity: return "MissingSimilarity";
    case ErrorCode::invalid_manifest: return "InvalidManifest";
    case ErrorCode::not_found: return "NotFound";
    case ErrorCode::invalid_state: return "InvalidState";
    case ErrorCode::payload_too_large: return "PayloadTooLarge";
    case ErrorCode::unsupported_media: return "UnsupportedMedia";
    case ErrorCode::config_error: return "ConfigError";
    case ErrorCode::io_error: return "IoError";
  }
  return "Unknown";
}

/// Base of every error raised by the library. `stage()` names the pipeline
/// stage the error surfaced in, when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail, std::string stage = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail),
        stage_(std::move(stage)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  const std::string& stage() const noexcept { return stage_; }

  Error with_stage(std::string stage) const {
    Error copy = *this;
    copy.stage_ = std::move(stage);
    return copy;
  }

 protected:
  void set_stage(std::string stage) { stage_ = std::move(stage); }

 private:
  ErrorCode code_;
  std::string detail_;
  std::string stage_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

inline void require(bool condition, const std::string& detail) {
  if (!condition) fail(ErrorCode::invalid_argument, detail);
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_ERROR_HPP
