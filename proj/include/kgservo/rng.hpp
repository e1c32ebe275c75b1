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

#include <cstdint>
#include <cmath>
#include <random>

namespace kgservo {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a root seed and a (stream, counter)
/// pair, so per-video or per-frame generators do not depend on call order.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                    std::uint64_t counter = 0) noexcept
{
  return mix64(mix64(mix64(root) ^ stream) ^ counter);
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::uint64_t stream,
                                std::uint64_t counter = 0)
{
  return std::mt19937_64(derive_seed(root, stream, counter));
}

/// Uniform double in [lo, hi) from raw engine bits; portable across standard
/// libraries unlike std::uniform_real_distribution.
inline double uniform(std::mt19937_64 &rng, double lo, double hi)
{
  double const unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * unit;
}

/// Box-Muller standard normal built on uniform().
inline double standard_normal(std::mt19937_64 &rng)
{
  double u1 = uniform(rng, 0.0, 1.0);
  while (u1 <= 0.0)
  {
    u1 = uniform(rng, 0.0, 1.0);
  }
  double const u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace kgservo
