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

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "kgservo/error.hpp"

namespace kgservo {

/// 8-bit grayscale raster, row-major.
struct Image
{
  int                       width  = 0;
  int                       height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
    : width(w)
    , height(h)
    , pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill)
  {}

  bool empty() const noexcept { return pixels.empty(); }

  std::uint8_t  at(int x, int y) const { return pixels[index(x, y)]; }
  std::uint8_t &at(int x, int y) { return pixels[index(x, y)]; }

  friend bool operator==(Image const &, Image const &) = default;

private:
  std::size_t index(int x, int y) const
  {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
  }
};

/// Probabilistic segmentation of one prompt; values in [0, 1].
struct BinaryMask
{
  int                 width  = 0;
  int                 height = 0;
  std::vector<double> values;
  std::string         prompt;

  BinaryMask() = default;
  BinaryMask(int w, int h, std::string label = {})
    : width(w)
    , height(h)
    , values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0)
    , prompt(std::move(label))
  {}

  double  at(int x, int y) const { return values[index(x, y)]; }
  double &at(int x, int y) { return values[index(x, y)]; }

  bool in_bounds(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width && y < height; }

  std::size_t count_above(double alpha) const noexcept
  {
    std::size_t n = 0;
    for (double v : values)
    {
      n += v >= alpha ? 1 : 0;
    }
    return n;
  }

  void validate() const
  {
    if (width <= 0 || height <= 0)
    {
      throw Error(ErrorCode::InvalidArgument, "mask dimensions must be positive");
    }
    if (values.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    {
      throw Error(ErrorCode::InvalidArgument, "mask value count does not match dimensions");
    }
    for (double v : values)
    {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      {
        throw Error(ErrorCode::InvalidArgument, "mask values must lie in [0, 1]");
      }
    }
  }

  friend bool operator==(BinaryMask const &, BinaryMask const &) = default;

private:
  std::size_t index(int x, int y) const
  {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
  }
};

inline Image mask_to_image(BinaryMask const &mask)
{
  Image img(mask.width, mask.height);
  for (std::size_t i = 0; i < mask.values.size(); ++i)
  {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(mask.values[i] * 255.0));
  }
  return img;
}

inline BinaryMask image_to_mask(Image const &img, std::string prompt = {})
{
  BinaryMask mask(img.width, img.height, std::move(prompt));
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
  {
    mask.values[i] = static_cast<double>(img.pixels[i]) / 255.0;
  }
  return mask;
}

namespace pnm {

inline void write_pgm(std::ostream &out, Image const &img)
{
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<char const *>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline std::string encode_pgm(Image const &img)
{
  std::ostringstream out(std::ios::binary);
  write_pgm(out, img);
  return std::move(out).str();
}

namespace detail {

inline int read_header_int(std::istream &in)
{
  // skips whitespace and '#' comments between header tokens
  int c = in.peek();
  while (c != EOF)
  {
    if (std::isspace(c))
    {
      in.get();
    }
    else if (c == '#')
    {
      std::string discard;
      std::getline(in, discard);
    }
    else
    {
      break;
    }
    c = in.peek();
  }
  int value = -1;
  if (!(in >> value) || value < 0)
  {
    throw Error(ErrorCode::ParseError, "malformed PNM header");
  }
  return value;
}

}  // namespace detail

/// Reads binary PGM (P5) or PPM (P6, converted to luma). maxval <= 255 only.
inline Image read_pnm(std::istream &in)
{
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
  {
    throw Error(ErrorCode::ParseError, "expected P5 or P6 magic");
  }
  int const w      = detail::read_header_int(in);
  int const h      = detail::read_header_int(in);
  int const maxval = detail::read_header_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
  {
    throw Error(ErrorCode::ParseError, "unsupported PNM dimensions or maxval");
  }
  in.get();  // single whitespace after maxval
  int const   channels = magic[1] == '5' ? 1 : 3;
  std::size_t count    = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<std::uint8_t> raw(count * static_cast<std::size_t>(channels));
  in.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
  {
    throw Error(ErrorCode::ParseError, "truncated PNM raster");
  }
  Image img(w, h);
  for (std::size_t i = 0; i < count; ++i)
  {
    double v = 0.0;
    if (channels == 1)
    {
      v = raw[i];
    }
    else
    {
      v = 0.299 * raw[3 * i] + 0.587 * raw[3 * i + 1] + 0.114 * raw[3 * i + 2];
    }
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0 / maxval));
  }
  return img;
}

inline Image decode_pnm(std::string const &bytes)
{
  std::istringstream in(bytes, std::ios::binary);
  return read_pnm(in);
}

inline void save_pgm(std::filesystem::path const &path, Image const &img)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
  {
    throw Error(ErrorCode::IoError, "cannot write " + path.string());
  }
  write_pgm(out, img);
  if (!out)
  {
    throw Error(ErrorCode::IoError, "short write to " + path.string());
  }
}

inline Image load_pnm(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw Error(ErrorCode::IoError, "cannot read " + path.string());
  }
  return read_pnm(in);
}

}  // namespace pnm
}  // namespace kgservo
