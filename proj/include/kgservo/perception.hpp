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

#include <array>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kgservo/btree.hpp"
#include "kgservo/error.hpp"
#include "kgservo/geometry.hpp"
#include "kgservo/image.hpp"

namespace kgservo::perception {

using geometry::ErrorVector;
using geometry::GeometricConstraint;
using geometry::HomogeneousLine;
using geometry::HomogeneousPoint;

struct PerceptionConfig
{
  double      alpha       = 0.4;
  std::size_t min_support = 16;
};

/// Point and line features of one prompt's mask.
struct FeatureSet
{
  HomogeneousPoint                        principal_point;
  std::array<HomogeneousLine, 2>          principal_axes{};
  std::array<std::array<double, 2>, 2>    axis_directions{};  // unit, descending variance
  std::array<double, 2>                   eigenvalues{};
  std::map<std::string, HomogeneousPoint> part_points;
  std::size_t                             pixel_count = 0;

  /// Second point on axis i, one standard deviation from the principal point.
  HomogeneousPoint axis_point(std::size_t i) const
  {
    double const scale = std::max(1.0, std::sqrt(std::max(eigenvalues[i], 0.0)));
    return {principal_point.x + scale * axis_directions[i][0], principal_point.y + scale * axis_directions[i][1], 1.0};
  }
};

/// Pixel coordinates (x, y, 1) with mask value >= alpha, row-major.
inline std::vector<HomogeneousPoint> threshold_points(BinaryMask const &mask, double alpha)
{
  if (!(alpha > 0.0 && alpha < 1.0))
  {
    throw Error(ErrorCode::InvalidArgument, "threshold alpha must lie in (0, 1)");
  }
  std::vector<HomogeneousPoint> out;
  for (int y = 0; y < mask.height; ++y)
  {
    for (int x = 0; x < mask.width; ++x)
    {
      if (mask.at(x, y) >= alpha)
      {
        out.push_back({static_cast<double>(x), static_cast<double>(y), 1.0});
      }
    }
  }
  if (out.empty())
  {
    throw Error(ErrorCode::EmptyMask, mask.prompt.empty() ? "no pixel passes the threshold" : mask.prompt);
  }
  return out;
}

namespace detail {

// eigenvectors are sign-ambiguous; pin them to positive x, then positive y
inline std::array<double, 2> orient(std::array<double, 2> d)
{
  constexpr double eps  = 1e-12;
  bool const       flip = std::abs(d[0]) > eps ? d[0] < 0.0 : d[1] < 0.0;
  if (flip)
  {
    d = {-d[0], -d[1]};
  }
  return {d[0] + 0.0, d[1] + 0.0};
}

inline HomogeneousPoint centroid(std::vector<HomogeneousPoint> const &points)
{
  double sx = 0.0;
  double sy = 0.0;
  for (auto const &p : points)
  {
    auto const q = p.normalized();
    sx += q.x;
    sy += q.y;
  }
  double const n = static_cast<double>(points.size());
  return {sx / n, sy / n, 1.0};
}

}  // namespace detail

/// Centroid plus covariance eigen-directions of a point set.
inline FeatureSet pca_features(std::vector<HomogeneousPoint> const &points, std::size_t min_support = 16)
{
  if (points.size() < min_support || points.empty())
  {
    throw Error(ErrorCode::InsufficientSupport,
                std::to_string(points.size()) + " points, need " + std::to_string(min_support));
  }
  FeatureSet fs;
  fs.pixel_count     = points.size();
  fs.principal_point = detail::centroid(points);

  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (auto const &p : points)
  {
    auto const   q  = p.normalized();
    double const dx = q.x - fs.principal_point.x;
    double const dy = q.y - fs.principal_point.y;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  double const n = static_cast<double>(points.size());
  sxx /= n;
  syy /= n;
  sxy /= n;

  double const half_trace = 0.5 * (sxx + syy);
  double const radius     = std::hypot(0.5 * (sxx - syy), sxy);
  fs.eigenvalues          = {half_trace + radius, half_trace - radius};
  if (fs.eigenvalues[0] < 1e-9 && std::abs(fs.eigenvalues[1]) < 1e-9)
  {
    throw Error(ErrorCode::DegenerateSpread, "all points coincide");
  }

  std::array<double, 2> major{1.0, 0.0};
  if (std::abs(sxy) > 1e-12 * (sxx + syy))
  {
    double const vx = fs.eigenvalues[0] - syy;
    double const vy = sxy;
    double const len = std::hypot(vx, vy);
    major             = {vx / len, vy / len};
  }
  else if (syy > sxx)
  {
    major = {0.0, 1.0};
  }
  major = detail::orient(major);
  auto const minor = detail::orient({-major[1], major[0]});

  fs.axis_directions = {major, minor};
  for (std::size_t i = 0; i < 2; ++i)
  {
    fs.principal_axes[i] = geometry::line_through(fs.principal_point, fs.axis_point(i));
  }
  return fs;
}

inline FeatureSet features_from_mask(BinaryMask const &mask, PerceptionConfig const &cfg = {})
{
  return pca_features(threshold_points(mask, cfg.alpha), cfg.min_support);
}

/// PCA features of `whole` plus the centroid of each labeled part mask
/// (the part-of-object strategy composes lines from these centroids).
inline FeatureSet features_with_parts(BinaryMask const &whole, std::map<std::string, BinaryMask> const &parts,
                                      PerceptionConfig const &cfg = {})
{
  FeatureSet fs = features_from_mask(whole, cfg);
  for (auto const &[label, mask] : parts)
  {
    auto const pts = threshold_points(mask, cfg.alpha);
    if (pts.size() < cfg.min_support)
    {
      throw Error(ErrorCode::InsufficientSupport, "part '" + label + "' has " + std::to_string(pts.size()) + " pixels");
    }
    fs.part_points[label] = detail::centroid(pts);
  }
  return fs;
}

/// Slot grammar: "goal:<name>" reads the action's goal features;
/// "<prompt>:center|major|minor" reads PCA features of a prompt;
/// "<prompt>:<part>" reads a part centroid.
inline HomogeneousPoint resolve_slot(std::string const &slot, std::map<std::string, FeatureSet> const &features,
                                     std::map<std::string, HomogeneousPoint> const &goals)
{
  auto const colon = slot.rfind(':');
  if (colon == std::string::npos)
  {
    throw Error(ErrorCode::UnresolvedSlot, slot);
  }
  std::string const owner = slot.substr(0, colon);
  std::string const name  = slot.substr(colon + 1);
  if (owner == "goal")
  {
    auto it = goals.find(name);
    if (it == goals.end())
    {
      throw Error(ErrorCode::UnresolvedSlot, slot);
    }
    return it->second;
  }
  auto it = features.find(owner);
  if (it == features.end())
  {
    throw Error(ErrorCode::UnresolvedSlot, owner);
  }
  FeatureSet const &fs = it->second;
  if (name == "center")
  {
    return fs.principal_point;
  }
  if (name == "major")
  {
    return fs.axis_point(0);
  }
  if (name == "minor")
  {
    return fs.axis_point(1);
  }
  auto part = fs.part_points.find(name);
  if (part == fs.part_points.end())
  {
    throw Error(ErrorCode::UnresolvedSlot, name);
  }
  return part->second;
}

/// Prompt referenced by a non-goal slot, or empty for goal slots.
inline std::string slot_prompt(std::string const &slot)
{
  auto const colon = slot.rfind(':');
  if (colon == std::string::npos)
  {
    return slot;
  }
  std::string owner = slot.substr(0, colon);
  return owner == "goal" ? std::string{} : owner;
}

struct ComposedConstraint
{
  std::string                   node_id;
  GeometricConstraint           constraint;
  ErrorVector                   error;
  std::vector<HomogeneousPoint> points;  // slot order
};

/// Evaluates every constraint of every currently active action node.
inline std::vector<ComposedConstraint> compose_constraints(btree::BTreeNode const &tree,
                                                           std::map<std::string, FeatureSet> const &features,
                                                           std::set<std::string> const &completed = {},
                                                           std::set<std::string> const &failed    = {})
{
  std::vector<ComposedConstraint> out;
  for (auto const *node : btree::active_actions(tree, completed, failed))
  {
    for (auto const &c : node->action.constraints)
    {
      ComposedConstraint cc{node->id, c, {}, {}};
      for (auto const &slot : c.slots)
      {
        cc.points.push_back(resolve_slot(slot, features, node->action.goals));
      }
      cc.error        = geometry::evaluate(c, cc.points);
      cc.error.source = node->id;
      out.push_back(std::move(cc));
    }
  }
  return out;
}

inline ErrorVector stack(std::vector<ComposedConstraint> const &composed)
{
  std::vector<std::pair<GeometricConstraint, ErrorVector>> pairs;
  pairs.reserve(composed.size());
  for (auto const &c : composed)
  {
    pairs.emplace_back(c.constraint, c.error);
  }
  return geometry::stack_errors(pairs);
}

/// Prompts referenced by the constraint actions of a tree.
inline std::set<std::string> referenced_prompts(btree::BTreeNode const &tree)
{
  std::set<std::string> out;
  btree::for_each_node(tree, [&](btree::BTreeNode const &n) {
    for (auto const &c : n.action.constraints)
    {
      for (auto const &s : c.slots)
      {
        if (auto p = slot_prompt(s); !p.empty())
        {
          out.insert(p);
        }
      }
    }
  });
  return out;
}

/// Single-slot mailbox: writers replace the value, readers see the newest.
template <typename T>
class LatestValue
{
public:
  void publish(T value)
  {
    {
      std::lock_guard lock(mutex_);
      value_ = std::move(value);
      ++version_;
    }
    cv_.notify_all();
  }

  std::optional<T> latest() const
  {
    std::lock_guard lock(mutex_);
    return value_;
  }

  /// Blocks until a value newer than `seen_version` is published.
  std::pair<T, std::uint64_t> wait_newer(std::uint64_t seen_version) const
  {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return version_ > seen_version && value_.has_value(); });
    return {*value_, version_};
  }

  std::uint64_t version() const
  {
    std::lock_guard lock(mutex_);
    return version_;
  }

private:
  mutable std::mutex              mutex_;
  mutable std::condition_variable cv_;
  std::optional<T>                value_;
  std::uint64_t                   version_ = 0;
};

}  // namespace kgservo::perception
