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
#ifndef TONEBRIDGE_MEDIA_HPP
#define TONEBRIDGE_MEDIA_HPP

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include "tonebridge/digest.hpp"
#include "tonebridge/error.hpp"

namespace tonebridge {

enum class MediaFormat { unknown, png, jpeg, mp4, matroska, avi };

inline std::string_view to_string(MediaFormat f) {
  switch (f) {
    case MediaFormat::png: return "png";
    case MediaFormat::jpeg: return "jpeg";
    case MediaFormat::mp4: return "mp4";
    case MediaFormat::matroska: return "matroska";
    case MediaFormat::avi: return "avi";
    case MediaFormat::unknown: break;
  }
  return "unknown";
}

inline bool is_image_format(MediaFormat f) { return f == MediaFormat::png || f == MediaFormat::jpeg; }
inline bool is_video_format(MediaFormat f) {
  return f == MediaFormat::mp4 || f == MediaFormat::matroska || f == MediaFormat::avi;
}

/// Magic-number detection; containers are only recognized, never parsed.
inline MediaFormat sniff_media(std::span<const std::uint8_t> b) {
  auto starts = [&](std::size_t at, std::string_view magic) {
    return b.size() >= at + magic.size() && std::memcmp(b.data() + at, magic.data(), magic.size()) == 0;
  };
  if (starts(0, "\x89PNG\r\n\x1a\n")) return MediaFormat::png;
  if (starts(0, "\xFF\xD8\xFF")) return MediaFormat::jpeg;
  if (starts(4, "ftyp")) return MediaFormat::mp4;
  if (starts(0, "\x1A\x45\xDF\xA3")) return MediaFormat::matroska;
  if (starts(0, "RIFF") && starts(8, "AVI ")) return MediaFormat::avi;
  return MediaFormat::unknown;
}

struct ImageInfo {
  MediaFormat format = MediaFormat::unknown;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
};

namespace detail {

inline ImageInfo decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorCode::decode_error, std::string("png: ") + image.message);
  image.format = PNG_FORMAT_RGBA;
  Bytes pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorCode::decode_error, "png: " + msg);
  }
  return {MediaFormat::png, image.width, image.height};
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline ImageInfo decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.message[0] = '\0';
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorCode::decode_error, std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  jpeg_start_decompress(&cinfo);
  // Row storage comes from the libjpeg pool so a longjmp leaks nothing.
  JSAMPARRAY row = (*cinfo.mem->alloc_sarray)(reinterpret_cast<j_common_ptr>(&cinfo), JPOOL_IMAGE,
                                              cinfo.output_width * cinfo.output_components, 1);
  while (cinfo.output_scanline < cinfo.output_height) jpeg_read_scanlines(&cinfo, row, 1);
  ImageInfo info{MediaFormat::jpeg, cinfo.output_width, cinfo.output_height};
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return info;
}

}  // namespace detail

/// Fully decodes the raster to prove it is readable. Throws DecodeError.
inline ImageInfo decode_image_info(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) fail(ErrorCode::decode_error, "empty image payload");
  switch (sniff_media(bytes)) {
    case MediaFormat::png: return detail::decode_png(bytes);
    case MediaFormat::jpeg: return detail::decode_jpeg(bytes);
    default: fail(ErrorCode::decode_error, "payload is not a PNG or JPEG image");
  }
}

/// RGB8 pixels to PNG.
inline Bytes encode_png_rgb(std::uint32_t width, std::uint32_t height,
                            std::span<const std::uint8_t> rgb) {
  require(width > 0 && height > 0, "png dimensions must be positive");
  require(rgb.size() == static_cast<std::size_t>(width) * height * 3, "rgb buffer size mismatch");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = width;
  image.height = height;
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr))
    fail(ErrorCode::io_error, std::string("png encode: ") + image.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr))
    fail(ErrorCode::io_error, std::string("png encode: ") + image.message);
  out.resize(size);
  return out;
}

inline Bytes solid_png(std::uint32_t width, std::uint32_t height, std::uint8_t r, std::uint8_t g,
                       std::uint8_t b) {
  Bytes rgb;
  rgb.reserve(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < static_cast<std::size_t>(width) * height; ++i)
    rgb.insert(rgb.end(), {r, g, b});
  return encode_png_rgb(width, height, rgb);
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_MEDIA_HPP
