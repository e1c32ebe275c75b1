//------------------------------------------------------------------------------
//
//   Copyright 2026 The kgservo Authors
//
//   Licensed under the Apache License, Version 2.0 (the "License");
//   you may not use this file except in compliance with the License.
//   You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
//   Unless required by applicable law or agreed to in writing, software
//   distributed under the License is distributed on an "AS IS" BASIS,
//   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//   See the License for the specific language governing permissions and
//   limitations under the License.
//
//------------------------------------------------------------------------------

#pragma once

#include <png.h>

#include <openssl/evp.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "kgservo/error.hpp"
#include "kgservo/image.hpp"

/// PNG and base64 codecs backed by libpng and OpenSSL.
namespace kgservo::codec {

inline std::string encode_png(Image const &img)
{
  if (img.empty())
  {
    throw Error(ErrorCode::InvalidArgument, "cannot encode an empty image");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width   = static_cast<png_uint_32>(img.width);
  image.height  = static_cast<png_uint_32>(img.height);
  image.format  = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
  {
    throw Error(ErrorCode::IoError, std::string("png: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
  {
    throw Error(ErrorCode::IoError, std::string("png: ") + image.message);
  }
  out.resize(size);
  return out;
}

/// Decodes any PNG to 8-bit grayscale (colour is reduced to luma by libpng).
inline Image decode_png(std::string_view bytes)
{
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
  {
    throw Error(ErrorCode::ParseError, std::string("png: ") + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  Image out(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr))
  {
    png_image_free(&image);
    throw Error(ErrorCode::ParseError, std::string("png: ") + image.message);
  }
  return out;
}

inline void save_png(std::filesystem::path const &path, Image const &img)
{
  auto const    bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
  {
    throw Error(ErrorCode::IoError, "cannot write " + path.string());
  }
}

inline Image load_png(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw Error(ErrorCode::IoError, "cannot read " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_png(ss.str());
}

inline std::string base64_encode(std::string_view bytes)
{
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int const   n = EVP_EncodeBlock(reinterpret_cast<unsigned char *>(out.data()),
                                  reinterpret_cast<unsigned char const *>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::string base64_decode(std::string_view text)
{
  if (text.size() % 4 != 0)
  {
    throw Error(ErrorCode::ParseError, "base64 length is not a multiple of 4");
  }
  std::string out(3 * text.size() / 4, '\0');
  int const   n = EVP_DecodeBlock(reinterpret_cast<unsigned char *>(out.data()),
                                  reinterpret_cast<unsigned char const *>(text.data()), static_cast<int>(text.size()));
  if (n < 0)
  {
    throw Error(ErrorCode::ParseError, "invalid base64");
  }
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding
  std::size_t pad = 0;
  for (std::size_t i = text.size(); i > 0 && text[i - 1] == '='; --i)
  {
    ++pad;
  }
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace kgservo::codec
