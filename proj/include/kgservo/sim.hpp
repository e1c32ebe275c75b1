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

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "kgservo/btree.hpp"
#include "kgservo/error.hpp"
#include "kgservo/image.hpp"
#include "kgservo/perception.hpp"
#include "kgservo/rng.hpp"
#include "kgservo/servo.hpp"

namespace kgservo::sim {

using Transform = Eigen::Isometry3d;
using Vec3      = Eigen::Vector3d;

struct Joint
{
  Vec3 axis   = Vec3::UnitZ();  // unit, in the parent frame
  Vec3 origin = Vec3::Zero();   // offset applied before the rotation
};

/// Serial chain of revolute joints ending in the camera frame.
struct KinematicChain
{
  Transform          base = Transform::Identity();
  std::vector<Joint> joints;
  Transform          tool = Transform::Identity();

  std::size_t n_joints() const noexcept { return joints.size(); }

  /// Shoulder yaw, shoulder pitch, elbow pitch and wrist roll; the camera
  /// looks straight down from 0.45 m above the table at q = 0.
  static KinematicChain default_arm()
  {
    KinematicChain chain;
    chain.joints = {
      {Vec3::UnitZ(), Vec3(0.0, 0.0, 0.5)},
      {Vec3::UnitY(), Vec3(0.0, 0.0, 0.0)},
      {Vec3::UnitY(), Vec3(0.35, 0.0, 0.0)},
      {Vec3::UnitZ(), Vec3(0.35, 0.0, -0.05)},
    };
    chain.tool = Transform(Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitX()));
    return chain;
  }
};

/// Camera-to-world pose for joint vector q.
inline Transform forward_kinematics(KinematicChain const &chain, servo::Vector const &q)
{
  if (static_cast<std::size_t>(q.size()) != chain.n_joints())
  {
    throw Error(ErrorCode::InvalidArgument, "joint vector length does not match the chain");
  }
  Transform t = chain.base;
  for (std::size_t i = 0; i < chain.joints.size(); ++i)
  {
    auto const &j = chain.joints[i];
    t             = t * Eigen::Translation3d(j.origin) * Eigen::AngleAxisd(q[static_cast<Eigen::Index>(i)], j.axis);
  }
  return t * chain.tool;
}

struct PinholeCamera
{
  double fx     = 525.0;
  double fy     = 525.0;
  double cx     = 320.0;
  double cy     = 240.0;
  int    width  = 640;
  int    height = 480;

  /// Pixel coordinates of a camera-frame point in front of the camera.
  std::optional<Eigen::Vector2d> project(Vec3 const &p) const
  {
    if (p.z() <= 1e-6)
    {
      return std::nullopt;
    }
    return Eigen::Vector2d(fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy);
  }

  void validate() const
  {
    if (!(fx > 0.0) || !(fy > 0.0) || width <= 0 || height <= 0)
    {
      throw Error(ErrorCode::InvalidArgument, "camera focal lengths and size must be positive");
    }
  }
};

enum class PartShape
{
  Box,
  Ellipsoid,
};

struct PartSpec
{
  PartShape shape  = PartShape::Box;
  Vec3      size   = Vec3::Constant(0.01);  // full extents, metres
  Vec3      offset = Vec3::Zero();          // centre in the object frame
  int       points = 1500;
};

/// Regular lattice filling the part volume with at least spec.points samples.
inline std::vector<Vec3> sample_part(PartSpec const &spec)
{
  if ((spec.size.array() <= 0.0).any() || spec.points < 1)
  {
    throw Error(ErrorCode::InvalidArgument, "part size and point count must be positive");
  }
  double            density = std::cbrt(static_cast<double>(spec.points) / spec.size.prod());
  std::vector<Vec3> out;
  for (int attempt = 0; attempt < 64; ++attempt)
  {
    out.clear();
    int const nx = std::max(2, static_cast<int>(std::ceil(spec.size.x() * density)));
    int const ny = std::max(2, static_cast<int>(std::ceil(spec.size.y() * density)));
    int const nz = std::max(2, static_cast<int>(std::ceil(spec.size.z() * density)));
    for (int ix = 0; ix < nx; ++ix)
    {
      for (int iy = 0; iy < ny; ++iy)
      {
        for (int iz = 0; iz < nz; ++iz)
        {
          // cell centres in [-0.5, 0.5]
          Vec3 const u((ix + 0.5) / nx - 0.5, (iy + 0.5) / ny - 0.5, (iz + 0.5) / nz - 0.5);
          if (spec.shape == PartShape::Ellipsoid && u.squaredNorm() > 0.25)
          {
            continue;
          }
          out.push_back(spec.offset + u.cwiseProduct(spec.size));
        }
      }
    }
    if (static_cast<int>(out.size()) >= spec.points)
    {
      break;
    }
    density *= 1.15;
  }
  return out;
}

struct SceneObject
{
  std::string                              name;
  std::string                              category;
  Transform                                pose = Transform::Identity();
  std::map<std::string, PartSpec>          part_specs;
  std::map<std::string, std::vector<Vec3>> parts;  // object-frame clouds

  void build_parts()
  {
    parts.clear();
    for (auto const &[label, spec] : part_specs)
    {
      parts[label] = sample_part(spec);
    }
  }
};

struct Scene
{
  PinholeCamera            camera;
  std::vector<SceneObject> objects;

  SceneObject const *find(std::string_view name) const
  {
    for (auto const &o : objects)
    {
      if (o.name == name)
      {
        return &o;
      }
    }
    return nullptr;
  }

  SceneObject *find(std::string_view name)
  {
    return const_cast<SceneObject *>(static_cast<Scene const &>(*this).find(name));
  }

  void validate() const
  {
    camera.validate();
    std::set<std::string> names;
    for (auto const &o : objects)
    {
      if (!names.insert(o.name).second)
      {
        throw Error(ErrorCode::InvalidArgument, "duplicate object name '" + o.name + "'");
      }
      if (o.parts.empty())
      {
        throw Error(ErrorCode::InvalidArgument, "object '" + o.name + "' has no parts");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Rendering

struct ObjectMasks
{
  BinaryMask                        whole;
  std::map<std::string, BinaryMask> parts;
};

namespace detail {

inline void splat(BinaryMask &mask, int u, int v)
{
  for (int dy = -1; dy <= 1; ++dy)
  {
    for (int dx = -1; dx <= 1; ++dx)
    {
      if (mask.in_bounds(u + dx, v + dy))
      {
        mask.at(u + dx, v + dy) = 1.0;
      }
    }
  }
}

/// Projects a cloud and splats it; returns the number of point centres that
/// landed inside the frame.
inline std::size_t render_cloud(std::vector<Vec3> const &cloud, Transform const &world_to_camera,
                                Transform const &object_pose, PinholeCamera const &camera, BinaryMask &mask)
{
  std::size_t     inside = 0;
  Transform const m      = world_to_camera * object_pose;
  for (auto const &p : cloud)
  {
    auto const px = camera.project(m * p);
    if (!px)
    {
      continue;
    }
    double const u = std::round(px->x());
    double const v = std::round(px->y());
    if (u < -1.0 || v < -1.0 || u > camera.width || v > camera.height)
    {
      continue;
    }
    int const iu = static_cast<int>(u);
    int const iv = static_cast<int>(v);
    if (mask.in_bounds(iu, iv))
    {
      ++inside;
    }
    splat(mask, iu, iv);
  }
  return inside;
}

}  // namespace detail

/// Whole-object mask plus separate masks for the parts listed in `split`,
/// from one projection pass.
inline ObjectMasks render_object_masks(Transform const &camera_pose, PinholeCamera const &camera,
                                       SceneObject const &object, std::set<std::string> const &split = {})
{
  ObjectMasks     out;
  Transform const inv = camera_pose.inverse();
  out.whole           = BinaryMask(camera.width, camera.height, object.name);
  for (auto const &[label, cloud] : object.parts)
  {
    if (split.count(label))
    {
      BinaryMask part(camera.width, camera.height, object.name + " " + label);
      detail::render_cloud(cloud, inv, object.pose, camera, part);
      for (std::size_t i = 0; i < part.values.size(); ++i)
      {
        out.whole.values[i] = std::max(out.whole.values[i], part.values[i]);
      }
      out.parts.emplace(label, std::move(part));
    }
    else
    {
      detail::render_cloud(cloud, inv, object.pose, camera, out.whole);
    }
  }
  if (out.whole.count_above(0.5) == 0)
  {
    throw Error(ErrorCode::OutOfView, object.name);
  }
  return out;
}

/// Mask of the object (or one labeled part): 1 on every pixel covered by a
/// 3x3 splat of a projected sample point.
inline BinaryMask render_mask(Transform const &camera_pose, PinholeCamera const &camera, SceneObject const &object,
                              std::optional<std::string> const &part = std::nullopt)
{
  if (!part)
  {
    BinaryMask      mask(camera.width, camera.height, object.name);
    Transform const inv    = camera_pose.inverse();
    std::size_t     inside = 0;
    for (auto const &[label, cloud] : object.parts)
    {
      inside += detail::render_cloud(cloud, inv, object.pose, camera, mask);
    }
    if (inside == 0)
    {
      throw Error(ErrorCode::OutOfView, object.name);
    }
    return mask;
  }
  auto it = object.parts.find(*part);
  if (it == object.parts.end())
  {
    throw Error(ErrorCode::InvalidArgument, "object '" + object.name + "' has no part '" + *part + "'");
  }
  BinaryMask mask(camera.width, camera.height, object.name + " " + *part);
  if (detail::render_cloud(it->second, camera_pose.inverse(), object.pose, camera, mask) == 0)
  {
    throw Error(ErrorCode::OutOfView, object.name + " " + *part);
  }
  return mask;
}

/// Grayscale view of the scene: dark table, one shade per object part.
inline Image render_frame(Transform const &camera_pose, Scene const &scene)
{
  auto const &camera = scene.camera;
  Image       img(camera.width, camera.height, 40);
  Transform   inv = camera_pose.inverse();
  for (auto const &object : scene.objects)
  {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : object.name)
    {
      h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    }
    int shade     = 90 + static_cast<int>(h % 100);
    int part_step = 0;
    for (auto const &[label, cloud] : object.parts)
    {
      BinaryMask mask(camera.width, camera.height);
      detail::render_cloud(cloud, inv, object.pose, camera, mask);
      auto const value = static_cast<std::uint8_t>(std::min(255, shade + part_step));
      for (std::size_t i = 0; i < mask.values.size(); ++i)
      {
        if (mask.values[i] > 0.5)
        {
          img.pixels[i] = value;
        }
      }
      part_step += 45;
    }
  }
  return img;
}

struct NoiseSpec
{
  double        jitter_px = 0.0;
  double        dropout   = 0.0;
  std::uint64_t seed      = 0;
};

/// Translates the blob by rounded Gaussian jitter, then drops foreground
/// pixels with probability `dropout`. Deterministic for a fixed seed.
inline BinaryMask degrade_mask(BinaryMask const &mask, NoiseSpec const &noise)
{
  if (!(noise.dropout >= 0.0 && noise.dropout <= 1.0) || !(noise.jitter_px >= 0.0))
  {
    throw Error(ErrorCode::InvalidArgument, "dropout must be in [0, 1] and jitter >= 0");
  }
  auto       rng = make_rng(noise.seed, 0xD3C0DE);
  int const  dx  = static_cast<int>(std::lround(noise.jitter_px * standard_normal(rng)));
  int const  dy  = static_cast<int>(std::lround(noise.jitter_px * standard_normal(rng)));
  BinaryMask out(mask.width, mask.height, mask.prompt);
  for (int y = 0; y < mask.height; ++y)
  {
    for (int x = 0; x < mask.width; ++x)
    {
      int const sx = x - dx;
      int const sy = y - dy;
      if (mask.in_bounds(sx, sy))
      {
        out.at(x, y) = mask.at(sx, sy);
      }
    }
  }
  if (noise.dropout > 0.0)
  {
    for (auto &v : out.values)
    {
      if (v > 0.0 && uniform(rng, 0.0, 1.0) < noise.dropout)
      {
        v = 0.0;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scene files

inline Transform pose_from_json(nlohmann::json const &j)
{
  auto const q = j.at("quaternion").get<std::vector<double>>();
  auto const t = j.at("translation").get<std::vector<double>>();
  if (q.size() != 4 || t.size() != 3)
  {
    throw Error(ErrorCode::ParseError, "pose needs a 4-element xyzw quaternion and a 3-element translation");
  }
  Eigen::Quaterniond quat(q[3], q[0], q[1], q[2]);
  if (quat.norm() < 1e-12)
  {
    throw Error(ErrorCode::ParseError, "zero quaternion");
  }
  Transform pose = Transform::Identity();
  pose.linear()      = quat.normalized().toRotationMatrix();
  pose.translation() = Vec3(t[0], t[1], t[2]);
  return pose;
}

inline nlohmann::json pose_to_json(Transform const &pose)
{
  Eigen::Quaterniond const q(pose.rotation());
  return {{"quaternion", {q.x(), q.y(), q.z(), q.w()}},
          {"translation", {pose.translation().x(), pose.translation().y(), pose.translation().z()}}};
}

inline Scene scene_from_json(nlohmann::json const &j)
{
  try
  {
    Scene scene;
    if (j.contains("camera"))
    {
      auto const &c  = j.at("camera");
      scene.camera.fx     = c.value("fx", scene.camera.fx);
      scene.camera.fy     = c.value("fy", scene.camera.fy);
      scene.camera.cx     = c.value("cx", scene.camera.cx);
      scene.camera.cy     = c.value("cy", scene.camera.cy);
      scene.camera.width  = c.value("width", scene.camera.width);
      scene.camera.height = c.value("height", scene.camera.height);
    }
    for (auto const &jo : j.at("objects"))
    {
      SceneObject o;
      o.name     = jo.at("name").get<std::string>();
      o.category = jo.value("category", std::string{});
      o.pose     = pose_from_json(jo.at("pose"));
      for (auto const &[label, jp] : jo.at("parts").items())
      {
        PartSpec    spec;
        auto const  shape = jp.at("shape").get<std::string>();
        if (shape == "box")
        {
          spec.shape = PartShape::Box;
        }
        else if (shape == "ellipsoid")
        {
          spec.shape = PartShape::Ellipsoid;
        }
        else
        {
          throw Error(ErrorCode::ParseError, "unknown part shape '" + shape + "'");
        }
        auto const size = jp.at("size").get<std::vector<double>>();
        auto const off  = jp.value("offset", std::vector<double>{0.0, 0.0, 0.0});
        if (size.size() != 3 || off.size() != 3)
        {
          throw Error(ErrorCode::ParseError, "part size and offset need 3 components");
        }
        spec.size   = Vec3(size[0], size[1], size[2]);
        spec.offset = Vec3(off[0], off[1], off[2]);
        spec.points = jp.value("points", spec.points);
        if (spec.points < 200)
        {
          throw Error(ErrorCode::ParseError, "part '" + label + "' needs at least 200 sample points");
        }
        o.part_specs[label] = spec;
      }
      o.build_parts();
      scene.objects.push_back(std::move(o));
    }
    scene.validate();
    return scene;
  }
  catch (nlohmann::json::exception const &e)
  {
    throw Error(ErrorCode::ParseError, std::string("scene: ") + e.what());
  }
}

inline nlohmann::json scene_to_json(Scene const &scene)
{
  nlohmann::json j;
  j["camera"] = {{"fx", scene.camera.fx},       {"fy", scene.camera.fy},         {"cx", scene.camera.cx},
                 {"cy", scene.camera.cy},       {"width", scene.camera.width}, {"height", scene.camera.height}};
  j["objects"] = nlohmann::json::array();
  for (auto const &o : scene.objects)
  {
    nlohmann::json jo{{"name", o.name}, {"category", o.category}, {"pose", pose_to_json(o.pose)}};
    for (auto const &[label, spec] : o.part_specs)
    {
      jo["parts"][label] = {{"shape", spec.shape == PartShape::Box ? "box" : "ellipsoid"},
                            {"size", {spec.size.x(), spec.size.y(), spec.size.z()}},
                            {"offset", {spec.offset.x(), spec.offset.y(), spec.offset.z()}},
                            {"points", spec.points}};
    }
    j["objects"].push_back(std::move(jo));
  }
  return j;
}

/// Object models for the tabletop objects used in the demos.
inline std::vector<std::string> catalog_names()
{
  return {"pen",         "marker", "banana", "carrot",     "apple", "lemon",
          "red pepper",  "tennis ball", "umbrella", "cup", "cereal box"};
}

inline SceneObject catalog_object(std::string const &name, Transform const &pose)
{
  auto box = [](double sx, double sy, double sz, double ox, double oy, double oz) {
    return PartSpec{PartShape::Box, Vec3(sx, sy, sz), Vec3(ox, oy, oz), 1500};
  };
  auto ellipsoid = [](double sx, double sy, double sz, double ox, double oy, double oz) {
    return PartSpec{PartShape::Ellipsoid, Vec3(sx, sy, sz), Vec3(ox, oy, oz), 1500};
  };
  SceneObject o;
  o.name = name;
  o.pose = pose;
  if (name == "pen")
  {
    o.category          = "stationery";
    o.part_specs["handle"] = box(0.10, 0.012, 0.012, -0.02, 0.0, 0.006);
    o.part_specs["cap"]    = box(0.04, 0.014, 0.014, 0.05, 0.0, 0.007);
  }
  else if (name == "marker")
  {
    o.category          = "stationery";
    o.part_specs["body"] = box(0.10, 0.018, 0.018, -0.015, 0.0, 0.009);
    o.part_specs["cap"]  = box(0.035, 0.02, 0.02, 0.0525, 0.0, 0.01);
  }
  else if (name == "banana")
  {
    o.category           = "fruit";
    o.part_specs["body"] = ellipsoid(0.16, 0.035, 0.035, 0.0, 0.0, 0.0175);
    o.part_specs["stem"] = box(0.03, 0.01, 0.01, 0.09, 0.0, 0.01);
  }
  else if (name == "carrot")
  {
    o.category             = "vegetable";
    o.part_specs["body"]   = ellipsoid(0.15, 0.03, 0.03, 0.0, 0.0, 0.015);
    o.part_specs["leaves"] = ellipsoid(0.05, 0.03, 0.01, 0.1, 0.0, 0.015);
  }
  else if (name == "apple")
  {
    o.category           = "fruit";
    o.part_specs["body"] = ellipsoid(0.08, 0.08, 0.08, 0.0, 0.0, 0.04);
    o.part_specs["stem"] = box(0.006, 0.006, 0.02, 0.0, 0.0, 0.085);
  }
  else if (name == "lemon")
  {
    o.category           = "fruit";
    o.part_specs["body"] = ellipsoid(0.08, 0.055, 0.055, 0.0, 0.0, 0.0275);
    o.part_specs["tip"]  = ellipsoid(0.015, 0.015, 0.015, 0.045, 0.0, 0.0275);
  }
  else if (name == "red pepper")
  {
    o.category           = "vegetable";
    o.part_specs["body"] = ellipsoid(0.08, 0.075, 0.09, 0.0, 0.0, 0.045);
    o.part_specs["stem"] = box(0.01, 0.01, 0.02, 0.0, 0.0, 0.1);
  }
  else if (name == "tennis ball")
  {
    o.category           = "sports equipment";
    o.part_specs["body"] = ellipsoid(0.067, 0.067, 0.067, 0.0, 0.0, 0.0335);
  }
  else if (name == "umbrella")
  {
    o.category             = "utility";
    o.part_specs["shaft"]  = box(0.22, 0.03, 0.03, 0.0, 0.0, 0.015);
    o.part_specs["handle"] = box(0.05, 0.02, 0.02, 0.135, 0.0, 0.015);
  }
  else if (name == "cup")
  {
    o.category             = "utility";
    o.part_specs["body"]   = box(0.08, 0.08, 0.1, 0.0, 0.0, 0.05);
    o.part_specs["handle"] = box(0.03, 0.01, 0.06, 0.055, 0.0, 0.05);
  }
  else if (name == "cereal box")
  {
    o.category           = "food";
    o.part_specs["body"] = box(0.12, 0.18, 0.05, 0.0, 0.0, 0.025);
  }
  else
  {
    throw Error(ErrorCode::InvalidArgument, "no catalog model for '" + name + "'");
  }
  o.build_parts();
  return o;
}

/// Pose on the table: position (x, y) and yaw about the vertical.
inline Transform table_pose(double x, double y, double yaw)
{
  Transform t = Transform::Identity();
  t.linear()      = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  t.translation() = Vec3(x, y, 0.0);
  return t;
}

// ---------------------------------------------------------------------------
// Plant adapter

/// Prompt-to-mask producer: the simulator renders ground truth, a sidecar
/// client segments a rendered frame.
class MaskSource
{
public:
  virtual ~MaskSource() = default;
  virtual ObjectMasks masks(Transform const &camera_pose, std::string const &prompt,
                            std::set<std::string> const &parts) = 0;
};

struct PromptTarget
{
  SceneObject const         *object = nullptr;
  std::optional<std::string> part;
};

/// "pen" names an object; "pen cap" names part "cap" of object "pen".
inline PromptTarget resolve_prompt(Scene const &scene, std::string const &prompt)
{
  if (auto const *o = scene.find(prompt))
  {
    return {o, std::nullopt};
  }
  for (auto const &o : scene.objects)
  {
    if (prompt.size() > o.name.size() + 1 && prompt.compare(0, o.name.size(), o.name) == 0 &&
        prompt[o.name.size()] == ' ')
    {
      std::string const part = prompt.substr(o.name.size() + 1);
      if (o.parts.count(part))
      {
        return {&o, part};
      }
    }
  }
  throw Error(ErrorCode::UnresolvedSlot, "prompt '" + prompt + "' names no scene object");
}

class SimMaskSource : public MaskSource
{
public:
  explicit SimMaskSource(Scene const &scene)
    : scene_(scene)
  {}

  ObjectMasks masks(Transform const &camera_pose, std::string const &prompt,
                    std::set<std::string> const &parts) override
  {
    auto const target = resolve_prompt(scene_, prompt);
    if (target.part)
    {
      ObjectMasks out;
      out.whole        = render_mask(camera_pose, scene_.camera, *target.object, target.part);
      out.whole.prompt = prompt;
      return out;
    }
    auto out         = render_object_masks(camera_pose, scene_.camera, *target.object, parts);
    out.whole.prompt = prompt;
    return out;
  }

private:
  Scene const &scene_;
};

/// Prompts of the active actions, each with the part labels its non-PCA
/// slots reference.
inline std::map<std::string, std::set<std::string>> referenced_parts(btree::BTreeNode const &tree,
                                                                     std::set<std::string> const &completed = {},
                                                                     std::set<std::string> const &failed    = {})
{
  std::map<std::string, std::set<std::string>> out;
  for (auto const *n : btree::active_actions(tree, completed, failed))
  {
    for (auto const &c : n->action.constraints)
    {
      for (auto const &s : c.slots)
      {
        auto const prompt = perception::slot_prompt(s);
        if (prompt.empty())
        {
          continue;
        }
        auto const name = s.substr(s.rfind(':') + 1);
        auto      &set  = out[prompt];
        if (name != "center" && name != "major" && name != "minor")
        {
          set.insert(name);
        }
      }
    }
  }
  return out;
}

/// The closed-loop plant: each call applies a joint increment, renders masks
/// for every prompt of the active constraints, composes them and returns the
/// stacked error. Perception failures surface as FeatureLost.
class SimPlant
{
public:
  SimPlant(KinematicChain chain, PinholeCamera camera, MaskSource &source, btree::BTreeNode tree,
           std::set<std::string> completed, servo::Vector q0, perception::PerceptionConfig pcfg = {},
           std::set<std::string> failed = {})
    : chain_(std::move(chain))
    , camera_(camera)
    , source_(&source)
    , tree_(std::move(tree))
    , completed_(std::move(completed))
    , failed_(std::move(failed))
    , q_(std::move(q0))
    , pcfg_(pcfg)
    , parts_(referenced_parts(tree_, completed_, failed_))
  {}

  servo::Vector operator()(servo::Vector const &delta_q)
  {
    q_ += delta_q;
    return measure();
  }

  servo::Vector measure()
  {
    Transform const pose = forward_kinematics(chain_, q_);
    try
    {
      std::map<std::string, perception::FeatureSet> features;
      for (auto const &[prompt, parts] : parts_)
      {
        auto masks = source_->masks(pose, prompt, parts);
        features.emplace(prompt, perception::features_with_parts(masks.whole, masks.parts, pcfg_));
      }
      composed_ = perception::compose_constraints(tree_, features, completed_, failed_);
      if (composed_.empty())
      {
        throw Error(ErrorCode::InvalidArgument, "no active constraint to servo on");
      }
      return servo::to_vector(perception::stack(composed_));
    }
    catch (Error const &e)
    {
      switch (e.code())
      {
      case ErrorCode::EmptyMask:
      case ErrorCode::OutOfView:
      case ErrorCode::InsufficientSupport:
      case ErrorCode::DegenerateSpread:
      case ErrorCode::CoincidentPoints:
      case ErrorCode::PointAtInfinity:
      case ErrorCode::SidecarError: throw Error(ErrorCode::FeatureLost, e.what());
      default: throw;
      }
    }
  }

  servo::Vector const &q() const noexcept { return q_; }
  Transform            camera_pose() const { return forward_kinematics(chain_, q_); }

  std::vector<perception::ComposedConstraint> const &last_composed() const noexcept { return composed_; }

private:
  KinematicChain                               chain_;
  PinholeCamera                                camera_;
  MaskSource                                  *source_;
  btree::BTreeNode                             tree_;
  std::set<std::string>                        completed_;
  std::set<std::string>                        failed_;
  servo::Vector                                q_;
  perception::PerceptionConfig                 pcfg_;
  std::map<std::string, std::set<std::string>> parts_;
  std::vector<perception::ComposedConstraint>  composed_;
};

}  // namespace kgservo::sim
