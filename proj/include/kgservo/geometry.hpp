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

#include <algorithm>
#include <array>
#include <cmath>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kgservo/error.hpp"

namespace kgservo::geometry {

/// Point of the projective image plane, pixel units. Finite points have w != 0.
struct HomogeneousPoint
{
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;

  bool is_finite() const noexcept { return w != 0.0; }

  /// Rescaled to w = 1. Throws PointAtInfinity for w = 0.
  HomogeneousPoint normalized() const
  {
    if (!is_finite())
    {
      throw Error(ErrorCode::PointAtInfinity, "point has w = 0");
    }
    return {x / w, y / w, 1.0};
  }

  friend bool operator==(HomogeneousPoint const &, HomogeneousPoint const &) = default;
};

/// Line a*x + b*y + c*w = 0. Lines built by line_through() satisfy
/// a^2 + b^2 = 1 with the leading nonzero of (a, b) positive.
struct HomogeneousLine
{
  double a = 0.0;
  double b = 1.0;
  double c = 0.0;

  double dot(HomogeneousPoint const &p) const noexcept { return a * p.x + b * p.y + c * p.w; }

  friend bool operator==(HomogeneousLine const &, HomogeneousLine const &) = default;
};

inline constexpr double kCoincidenceTolerance = 1e-12;

/// Scales a line so that a^2 + b^2 = 1 and fixes the sign convention.
inline HomogeneousLine canonical_line(double a, double b, double c)
{
  double const n = std::hypot(a, b);
  if (n < kCoincidenceTolerance)
  {
    throw Error(ErrorCode::PointAtInfinity, "line has no finite part (a = b = 0)");
  }
  a /= n;
  b /= n;
  c /= n;
  bool const flip = std::abs(a) > kCoincidenceTolerance ? a < 0.0 : b < 0.0;
  if (flip)
  {
    a = -a;
    b = -b;
    c = -c;
  }
  return {a + 0.0, b + 0.0, c + 0.0};
}

inline HomogeneousLine line_through(HomogeneousPoint p1, HomogeneousPoint p2)
{
  if (p1.is_finite())
  {
    p1 = p1.normalized();
  }
  if (p2.is_finite())
  {
    p2 = p2.normalized();
  }
  double const a = p1.y * p2.w - p1.w * p2.y;
  double const b = p1.w * p2.x - p1.x * p2.w;
  double const c = p1.x * p2.y - p1.y * p2.x;
  if (std::abs(a) + std::abs(b) + std::abs(c) < kCoincidenceTolerance)
  {
    throw Error(ErrorCode::CoincidentPoints,
                "(" + std::to_string(p1.x) + ", " + std::to_string(p1.y) + ") repeated");
  }
  if (std::hypot(a, b) < kCoincidenceTolerance)
  {
    throw Error(ErrorCode::PointAtInfinity, "both points at infinity span the ideal line");
  }
  return canonical_line(a, b, c);
}

enum class ConstraintKind
{
  p2p,
  p2l,
  l2l,
  par,
};

constexpr std::string_view to_string(ConstraintKind kind) noexcept
{
  switch (kind)
  {
  case ConstraintKind::p2p: return "p2p";
  case ConstraintKind::p2l: return "p2l";
  case ConstraintKind::l2l: return "l2l";
  case ConstraintKind::par: return "par";
  }
  return "?";
}

inline ConstraintKind parse_constraint_kind(std::string_view text)
{
  for (auto kind : {ConstraintKind::p2p, ConstraintKind::p2l, ConstraintKind::l2l, ConstraintKind::par})
  {
    if (text == to_string(kind))
    {
      return kind;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown constraint kind '" + std::string(text) + "'");
}

constexpr std::size_t slot_count(ConstraintKind kind) noexcept
{
  switch (kind)
  {
  case ConstraintKind::p2p: return 2;
  case ConstraintKind::p2l: return 3;
  case ConstraintKind::l2l: return 4;
  case ConstraintKind::par: return 4;
  }
  return 0;
}

constexpr std::size_t error_dimension(ConstraintKind kind) noexcept
{
  switch (kind)
  {
  case ConstraintKind::p2p: return 2;
  case ConstraintKind::p2l: return 1;
  case ConstraintKind::l2l: return 2;
  case ConstraintKind::par: return 1;
  }
  return 0;
}

struct GeometricConstraint
{
  ConstraintKind           kind = ConstraintKind::p2p;
  std::vector<std::string> slots;
  double                   weight = 1.0;

  GeometricConstraint() = default;
  GeometricConstraint(ConstraintKind k, std::vector<std::string> s, double alpha = 1.0)
    : kind(k)
    , slots(std::move(s))
    , weight(alpha)
  {
    validate();
  }

  void validate() const
  {
    if (slots.size() != slot_count(kind))
    {
      throw Error(ErrorCode::InvalidArgument,
                  std::string(to_string(kind)) + " takes " + std::to_string(slot_count(kind)) +
                    " slots, got " + std::to_string(slots.size()));
    }
    if (!(weight >= 0.0) || !std::isfinite(weight))
    {
      throw Error(ErrorCode::InvalidArgument, "constraint weight must be finite and >= 0");
    }
  }

  friend bool operator==(GeometricConstraint const &, GeometricConstraint const &) = default;
};

struct ErrorVector
{
  std::vector<double> values;
  std::string         source;

  std::size_t size() const noexcept { return values.size(); }

  double norm_inf() const noexcept
  {
    double m = 0.0;
    for (double v : values)
    {
      m = std::max(m, std::abs(v));
    }
    return m;
  }

  friend bool operator==(ErrorVector const &, ErrorVector const &) = default;
};

inline ErrorVector eval_p2p(HomogeneousPoint const &f1, HomogeneousPoint const &f2)
{
  auto const a = f1.normalized();
  auto const b = f2.normalized();
  return {{b.x - a.x, b.y - a.y}, "p2p"};
}

/// Signed pixel distance from f1 to the line through f2 and f3.
inline ErrorVector eval_p2l(HomogeneousPoint const &f1, HomogeneousPoint const &f2,
                            HomogeneousPoint const &f3)
{
  auto const line = line_through(f2, f3);
  auto const p    = f1.normalized();
  return {{line.dot(p)}, "p2l"};
}

/// Distances of f1 and f2 to the line through f3 and f4, kept as a 2-vector so
/// that symmetric crossings do not cancel.
inline ErrorVector eval_l2l(HomogeneousPoint const &f1, HomogeneousPoint const &f2,
                            HomogeneousPoint const &f3, HomogeneousPoint const &f4)
{
  auto const line = line_through(f3, f4);
  return {{line.dot(f1.normalized()), line.dot(f2.normalized())}, "l2l"};
}

/// Scalar form f1.l34 + f2.l34; diagnostic only.
inline double l2l_scalar_sum(HomogeneousPoint const &f1, HomogeneousPoint const &f2,
                             HomogeneousPoint const &f3, HomogeneousPoint const &f4)
{
  auto const e = eval_l2l(f1, f2, f3, f4);
  return e.values[0] + e.values[1];
}

/// Vanishing point l12 x l34 of the two normalized lines.
inline std::array<double, 3> vanishing_point(HomogeneousLine const &l, HomogeneousLine const &m)
{
  return {l.b * m.c - l.c * m.b, l.c * m.a - l.a * m.c, l.a * m.b - l.b * m.a};
}

/// Third component of the vanishing point: sine of the angle between the lines.
inline ErrorVector eval_par(HomogeneousPoint const &f1, HomogeneousPoint const &f2,
                            HomogeneousPoint const &f3, HomogeneousPoint const &f4)
{
  auto const l12 = line_through(f1, f2);
  auto const l34 = line_through(f3, f4);
  return {{vanishing_point(l12, l34)[2]}, "par"};
}

/// Evaluates the residual of `constraint` on points given in slot order.
inline ErrorVector evaluate(GeometricConstraint const &constraint, std::span<HomogeneousPoint const> points)
{
  constraint.validate();
  if (points.size() != slot_count(constraint.kind))
  {
    throw Error(ErrorCode::InvalidArgument, "point count does not match constraint slots");
  }
  ErrorVector e;
  switch (constraint.kind)
  {
  case ConstraintKind::p2p: e = eval_p2p(points[0], points[1]); break;
  case ConstraintKind::p2l: e = eval_p2l(points[0], points[1], points[2]); break;
  case ConstraintKind::l2l: e = eval_l2l(points[0], points[1], points[2], points[3]); break;
  case ConstraintKind::par: e = eval_par(points[0], points[1], points[2], points[3]); break;
  }
  return e;
}

/// Concatenation of weight * error, in input order.
inline ErrorVector stack_errors(std::span<std::pair<GeometricConstraint, ErrorVector> const> items)
{
  if (items.empty())
  {
    throw Error(ErrorCode::InvalidArgument, "cannot stack an empty constraint list");
  }
  ErrorVector out;
  out.source = "stack";
  for (auto const &[constraint, error] : items)
  {
    for (double v : error.values)
    {
      out.values.push_back(constraint.weight * v);
    }
  }
  return out;
}

}  // namespace kgservo::geometry
