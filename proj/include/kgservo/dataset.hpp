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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "kgservo/btree.hpp"
#include "kgservo/codec.hpp"
#include "kgservo/ekg.hpp"
#include "kgservo/error.hpp"
#include "kgservo/eval.hpp"
#include "kgservo/perception.hpp"
#include "kgservo/rng.hpp"
#include "kgservo/sim.hpp"
#include "kgservo/task.hpp"

namespace kgservo::dataset {

namespace fs = std::filesystem;

struct NoiseLevel
{
  double jitter_px = 0.0;
  double dropout   = 0.0;
};

struct GenerateConfig
{
  std::size_t   n_videos    = 19;
  std::uint64_t seed        = 1;
  int           frames      = 24;  // rendered frames per video
  int           stride      = 1;   // keep every stride-th frame
  double        place_range = 0.08;
  double        yaw_spread  = 50.0 * std::numbers::pi / 180.0;
  NoiseLevel    light{6.0, 0.3};
  NoiseLevel    heavy{14.0, 0.6};
  int           seg_blur_px = 2;
};

/// Grasp part (largest volume) and the part that fixes the object axis
/// together with it.
inline std::pair<std::string, std::string> grasp_parts(sim::SceneObject const &o)
{
  if (o.part_specs.size() < 2)
  {
    throw Error(ErrorCode::InvalidArgument, "object '" + o.name + "' needs two parts");
  }
  std::vector<std::pair<double, std::string>> by_volume;
  for (auto const &[label, spec] : o.part_specs)
  {
    by_volume.emplace_back(-spec.size.prod(), label);
  }
  std::sort(by_volume.begin(), by_volume.end());
  return {by_volume[0].second, by_volume[1].second};
}

/// p2p + par stack composed either from part centroids (grasp part, line
/// to the other part) or from principal features (centroid, major axis).
inline btree::BTreeNode composition_tree(std::string const &prompt, task::GraspGoals const &goals,
                                         std::optional<std::pair<std::string, std::string>> const &parts)
{
  std::string const a = prompt + ":" + (parts ? parts->first : std::string("center"));
  std::string const b = prompt + ":" + (parts ? parts->second : std::string("major"));
  btree::ActionPayload pp, par;
  pp.constraints.push_back({geometry::ConstraintKind::p2p, {"goal:grip", a}});
  pp.goals["grip"] = goals.grip;
  par.constraints.push_back({geometry::ConstraintKind::par, {"goal:grip", "goal:grip_dir", a, b}, task::kParWeight});
  par.goals["grip"]     = goals.grip;
  par.goals["grip_dir"] = goals.grip_dir;
  return btree::BTreeNode::parallel(
    "Move", {btree::BTreeNode::make_action("PP", pp), btree::BTreeNode::make_action("Par", par)});
}

/// Mean of the stacked error components: the per-frame scalar score.
inline double frame_score(btree::BTreeNode const &composition, std::string const &prompt,
                          perception::FeatureSet const &features)
{
  auto const composed = perception::compose_constraints(composition, {{prompt, features}});
  auto const e        = perception::stack(composed);
  double     sum      = 0.0;
  for (double v : e.values)
  {
    sum += v;
  }
  return sum / static_cast<double>(e.values.size());
}

/// Soft stand-in for a segmentation network: box-blurred whole mask with
/// weaker confidence on the smaller part.
inline BinaryMask soft_segmentation(sim::ObjectMasks const &m, std::string const &weak_part, int radius)
{
  BinaryMask src = m.whole;
  if (auto it = m.parts.find(weak_part); it != m.parts.end())
  {
    for (std::size_t i = 0; i < src.values.size(); ++i)
    {
      if (it->second.values[i] > 0.5)
      {
        src.values[i] = 0.7;
      }
    }
  }
  // box filter through a summed-area table, zero outside the frame
  int const           w = src.width;
  int const           h = src.height;
  std::vector<double> sat(static_cast<std::size_t>(w + 1) * static_cast<std::size_t>(h + 1), 0.0);
  auto const          at = [&](int x, int y) -> double & {
    return sat[static_cast<std::size_t>(y) * static_cast<std::size_t>(w + 1) + static_cast<std::size_t>(x)];
  };
  for (int y = 0; y < h; ++y)
  {
    for (int x = 0; x < w; ++x)
    {
      at(x + 1, y + 1) = src.at(x, y) + at(x, y + 1) + at(x + 1, y) - at(x, y);
    }
  }
  BinaryMask   out(w, h, src.prompt);
  double const area = (2.0 * radius + 1) * (2.0 * radius + 1);
  for (int y = 0; y < h; ++y)
  {
    int const y0 = std::max(0, y - radius), y1 = std::min(h, y + radius + 1);
    for (int x = 0; x < w; ++x)
    {
      int const    x0  = std::max(0, x - radius), x1 = std::min(w, x + radius + 1);
      double const sum = at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0);
      out.at(x, y)     = std::clamp(sum / area, 0.0, 1.0);
    }
  }
  return out;
}

inline BinaryMask merge_masks(std::map<std::string, BinaryMask> const &parts, std::string prompt)
{
  BinaryMask out;
  for (auto const &[label, m] : parts)
  {
    if (out.values.empty())
    {
      out = BinaryMask(m.width, m.height, prompt);
    }
    for (std::size_t i = 0; i < m.values.size(); ++i)
    {
      out.values[i] = std::max(out.values[i], m.values[i]);
    }
  }
  return out;
}

namespace detail {

inline void write_text(fs::path const &p, std::string const &text)
{
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out)
  {
    throw Error(ErrorCode::IoError, "cannot write " + p.string());
  }
}

inline std::string read_text(fs::path const &p)
{
  std::ifstream in(p, std::ios::binary);
  if (!in)
  {
    throw Error(ErrorCode::DatasetFormat, p.string() + ": cannot open");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string frame_name(int f)
{
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", f);
  return buf;
}

inline std::string fmt(double v) { return ekg::detail::format_double(v); }

inline double smoothstep(double s) { return s * s * (3.0 - 2.0 * s); }

}  // namespace detail

struct VideoRecord
{
  std::string              id;
  std::string              object;
  std::string              grasp_part;
  std::string              other_part;
  std::vector<std::string> part_labels;
  int                      frames = 0;
  bool                     servo_converged = false;
  Image                    first_frame;
  ekg::Graph               graph;
};

/// Renders n scripted videos into `out`: one object per video at a random
/// table placement, joint trajectory interpolated from a random start to
/// the configuration reached by a servo run. Per kept frame it stores the
/// ground-truth part masks, a soft segmentation mask and two noise levels
/// of degraded part masks, plus the ground-truth constraint errors.
inline std::vector<VideoRecord> generate(sim::Scene const &scene, fs::path const &out, GenerateConfig const &cfg)
{
  if (cfg.n_videos == 0 || cfg.frames < 2 || cfg.stride < 1)
  {
    throw Error(ErrorCode::InvalidArgument, "need at least one video, two frames and a positive stride");
  }
  std::vector<sim::SceneObject const *> eligible;
  for (auto const &o : scene.objects)
  {
    if (o.part_specs.size() >= 2)
    {
      eligible.push_back(&o);
    }
  }
  if (eligible.empty())
  {
    throw Error(ErrorCode::InvalidArgument, "scene has no object with two labeled parts");
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec)
  {
    throw Error(ErrorCode::IoError, "cannot create " + out.string() + ": " + ec.message());
  }

  auto const  chain = sim::KinematicChain::default_arm();
  auto const  goals = task::GraspGoals::for_camera(scene.camera);
  std::vector<VideoRecord> records;
  nlohmann::json           manifest{{"seed", cfg.seed},
                                    {"frames", cfg.frames},
                                    {"stride", cfg.stride},
                                    {"noise",
                                     {{"light", {{"jitter_px", cfg.light.jitter_px}, {"dropout", cfg.light.dropout}}},
                                      {"heavy", {{"jitter_px", cfg.heavy.jitter_px}, {"dropout", cfg.heavy.dropout}}}}},
                                    {"goals",
                                     {{"grip", {goals.grip.x, goals.grip.y}}, {"grip_dir", {goals.grip_dir.x, goals.grip_dir.y}}}},
                                    {"videos", nlohmann::json::array()}};
  for (std::size_t v = 0; v < cfg.n_videos; ++v)
  {
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "video-%03zu", v + 1);
    VideoRecord rec;
    rec.id = idbuf;

    sim::SceneObject obj = *eligible[v % eligible.size()];
    auto const [grasp, other] = grasp_parts(obj);
    rec.object     = obj.name;
    rec.grasp_part = grasp;
    rec.other_part = other;
    for (auto const &[label, _] : obj.parts)
    {
      rec.part_labels.push_back(label);
    }

    // placement and start configuration, resampled until the object is
    // usable in the first frame and the recording servo run converges
    sim::Scene    video_scene;
    servo::Vector q_start(4);
    servo::Vector q_goal(4);
    video_scene.camera = scene.camera;
    auto       rng     = make_rng(cfg.seed, 0x5EED0000ULL + v);
    auto const tree    = task::grasp_tree(obj.name, {geometry::ConstraintKind::p2p, geometry::ConstraintKind::par}, goals);
    for (int attempt = 0;; ++attempt)
    {
      if (attempt == 50)
      {
        throw Error(ErrorCode::InvalidArgument, "no usable placement for '" + obj.name + "' in " + rec.id);
      }
      double const x   = 0.7 + uniform(rng, -cfg.place_range, cfg.place_range);
      double const y   = uniform(rng, -cfg.place_range, cfg.place_range);
      double const yaw = std::numbers::pi / 2 + uniform(rng, -cfg.yaw_spread, cfg.yaw_spread);
      obj.pose         = sim::table_pose(x, y, yaw);
      q_start << uniform(rng, -0.1, 0.1), uniform(rng, -0.06, 0.06), uniform(rng, -0.06, 0.06),
        uniform(rng, -0.3, 0.3);
      video_scene.objects = {obj};
      try
      {
        auto const m = sim::render_object_masks(sim::forward_kinematics(chain, q_start), scene.camera, obj,
                                                {grasp, other});
        perception::features_with_parts(m.whole, m.parts);
      }
      catch (Error const &)
      {
        continue;
      }
      sim::SimMaskSource source(video_scene);
      task::TrialConfig  tcfg;
      tcfg.servo.broyden_lambda = 1.0;
      tcfg.object               = obj.name;
      tcfg.graph_id             = rec.id;
      auto const trial          = task::run_trial(chain, scene.camera, source, tree, q_start, tcfg);
      if (trial.succeeded())
      {
        q_goal              = trial.q_final;
        rec.graph           = trial.graph;
        rec.servo_converged = true;
        break;
      }
    }
    rec.first_frame           = sim::render_frame(sim::forward_kinematics(chain, q_start), video_scene);

    fs::path const dir = out / rec.id;
    fs::create_directories(dir / "masks", ec);
    if (ec)
    {
      throw Error(ErrorCode::IoError, "cannot create " + (dir / "masks").string());
    }
    pnm::save_pgm(dir / "first_frame.pgm", rec.first_frame);
    detail::write_text(dir / "graph.ekg", ekg::serialize(rec.graph));

    auto const   gt_tree = composition_tree(obj.name, goals, std::pair{grasp, other});
    std::string  csv     = "frame,score\n";
    int          kept    = 0;
    for (int k = 0; k < cfg.frames; k += cfg.stride)
    {
      double const        s    = detail::smoothstep(static_cast<double>(k) / (cfg.frames - 1));
      servo::Vector const q    = q_start + s * (q_goal - q_start);
      auto const          pose = sim::forward_kinematics(chain, q);
      std::set<std::string> all_parts(rec.part_labels.begin(), rec.part_labels.end());
      auto const            m    = sim::render_object_masks(pose, scene.camera, obj, all_parts);
      std::string const     base = (dir / "masks" / detail::frame_name(kept)).string();
      for (auto const &[label, mask] : m.parts)
      {
        codec::save_png(base + "_gt_" + ekg::entity_local_name(label) + ".png", mask_to_image(mask));
        for (auto const &[level, noise] : {std::pair{"light", cfg.light}, std::pair{"heavy", cfg.heavy}})
        {
          std::uint64_t const seed = derive_seed(cfg.seed, v * 1000003ULL + static_cast<std::uint64_t>(kept),
                                                 std::hash<std::string>{}(label + level) & 0xFFFF);
          auto const noisy = sim::degrade_mask(mask, {noise.jitter_px, noise.dropout, seed});
          codec::save_png(base + "_noisy_" + level + "_" + ekg::entity_local_name(label) + ".png",
                          mask_to_image(noisy));
        }
      }
      codec::save_png(base + "_seg.png", mask_to_image(soft_segmentation(m, other, cfg.seg_blur_px)));
      auto const features = perception::features_with_parts(m.whole, m.parts);
      csv += std::to_string(kept) + "," + detail::fmt(frame_score(gt_tree, obj.name, features)) + "\n";
      ++kept;
    }
    rec.frames = kept;
    detail::write_text(dir / "gt_errors.csv", csv);
    nlohmann::json vj{{"id", rec.id},
                      {"object", rec.object},
                      {"category", obj.category},
                      {"grasp_part", grasp},
                      {"other_part", other},
                      {"parts", rec.part_labels},
                      {"frames", kept},
                      {"servo_converged", rec.servo_converged}};
    detail::write_text(dir / "video.json", vj.dump(2) + "\n");
    manifest["videos"].push_back(rec.id);
    records.push_back(std::move(rec));
  }
  detail::write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return records;
}

// ---------------------------------------------------------------------------
// Baseline evaluation

struct BaselineReport
{
  std::vector<eval::ReportRow>              rows;
  std::map<std::string, eval::DatasetScore> details;
  std::vector<std::string>                  warnings;
};

inline std::vector<std::string> method_pairs()
{
  return {"GT vs GT-PCA", "SEG vs GT", "SEG vs GT-PCA", "NOISY-LIGHT vs GT", "NOISY-HEAVY vs GT"};
}

namespace detail {

inline nlohmann::json read_json(fs::path const &p)
{
  try
  {
    return nlohmann::json::parse(read_text(p));
  }
  catch (nlohmann::json::parse_error const &e)
  {
    throw Error(ErrorCode::DatasetFormat, p.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

inline std::vector<double> read_scores(fs::path const &p)
{
  std::istringstream in(read_text(p));
  std::string        line;
  std::vector<double> out;
  int                 lineno = 0;
  while (std::getline(in, line))
  {
    ++lineno;
    if (lineno == 1)
    {
      if (line != "frame,score")
      {
        throw Error(ErrorCode::DatasetFormat, p.string() + ":1: expected header 'frame,score'");
      }
      continue;
    }
    if (line.empty())
    {
      continue;
    }
    auto const comma = line.find(',');
    try
    {
      if (comma == std::string::npos)
      {
        throw std::invalid_argument("missing comma");
      }
      std::size_t used  = 0;
      int const   frame = std::stoi(line.substr(0, comma));
      double      value = std::stod(line.substr(comma + 1), &used);
      if (frame != static_cast<int>(out.size()) || comma + 1 + used != line.size() || !std::isfinite(value))
      {
        throw std::invalid_argument("bad row");
      }
      out.push_back(value);
    }
    catch (std::exception const &)
    {
      throw Error(ErrorCode::DatasetFormat, p.string() + ":" + std::to_string(lineno) + ": malformed row '" + line + "'");
    }
  }
  return out;
}

inline BinaryMask read_mask(fs::path const &p, std::string const &prompt)
{
  if (!fs::exists(p))
  {
    throw Error(ErrorCode::DatasetFormat, p.string() + ": missing mask");
  }
  try
  {
    return image_to_mask(codec::load_png(p), prompt);
  }
  catch (Error const &e)
  {
    throw Error(ErrorCode::DatasetFormat, p.string() + ": " + e.detail());
  }
}

}  // namespace detail

/// Scores every method on every video of a generated dataset and reports
/// mean LCC / SROCC per method pair. A method whose features cannot be
/// composed on some frame fails the whole video.
inline BaselineReport run_baselines(fs::path const &dir, bool srocc_literal = false, int stride = 1,
                                    perception::PerceptionConfig const &pcfg = {})
{
  if (stride < 1)
  {
    throw Error(ErrorCode::InvalidArgument, "stride must be positive");
  }
  auto const manifest = detail::read_json(dir / "manifest.json");
  task::GraspGoals goals;
  try
  {
    auto const g  = manifest.at("goals");
    goals.grip     = {g.at("grip")[0].get<double>(), g.at("grip")[1].get<double>(), 1.0};
    goals.grip_dir = {g.at("grip_dir")[0].get<double>(), g.at("grip_dir")[1].get<double>(), 1.0};
  }
  catch (nlohmann::json::exception const &e)
  {
    throw Error(ErrorCode::DatasetFormat, (dir / "manifest.json").string() + ": " + e.what());
  }

  std::map<std::string, std::vector<eval::ScoreSeries>> series;
  for (auto const &vid_json : manifest.at("videos"))
  {
    std::string const id = vid_json.get<std::string>();
    fs::path const    vd = dir / id;
    auto const        vj = detail::read_json(vd / "video.json");
    std::string       object, grasp, other;
    std::vector<std::string> labels;
    int                      frames = 0;
    try
    {
      object = vj.at("object").get<std::string>();
      grasp  = vj.at("grasp_part").get<std::string>();
      other  = vj.at("other_part").get<std::string>();
      labels = vj.at("parts").get<std::vector<std::string>>();
      frames = vj.at("frames").get<int>();
    }
    catch (nlohmann::json::exception const &e)
    {
      throw Error(ErrorCode::DatasetFormat, (vd / "video.json").string() + ": " + e.what());
    }

    eval::ScoreSeries gt{id, "GT", detail::read_scores(vd / "gt_errors.csv"), false};
    if (static_cast<int>(gt.scores.size()) != frames)
    {
      throw Error(ErrorCode::DatasetFormat, (vd / "gt_errors.csv").string() + ": " + std::to_string(gt.scores.size()) +
                                              " rows, video.json says " + std::to_string(frames));
    }
    if (stride > 1)
    {
      std::vector<double> kept;
      for (std::size_t f = 0; f < gt.scores.size(); f += static_cast<std::size_t>(stride))
      {
        kept.push_back(gt.scores[f]);
      }
      gt.scores = std::move(kept);
    }
    auto const part_tree = composition_tree(object, goals, std::pair{grasp, other});
    auto const pca_tree  = composition_tree(object, goals, std::nullopt);

    std::map<std::string, eval::ScoreSeries> methods;
    for (auto const *name : {"GT-PCA", "SEG", "NOISY-LIGHT", "NOISY-HEAVY"})
    {
      methods[name] = {id, name, {}, false};
    }
    auto score_into = [&](eval::ScoreSeries &s, auto &&compute) {
      if (s.failed)
      {
        return;
      }
      try
      {
        s.scores.push_back(compute());
      }
      catch (Error const &e)
      {
        if (e.code() == ErrorCode::DatasetFormat)
        {
          throw;
        }
        s.failed = true;
        s.scores.clear();
      }
    };

    for (int f = 0; f < frames; f += stride)
    {
      std::string const base = (vd / "masks" / detail::frame_name(f)).string();
      std::map<std::string, BinaryMask> gt_parts, light, heavy;
      for (auto const &label : labels)
      {
        auto const local = ekg::entity_local_name(label);
        gt_parts[label]  = detail::read_mask(base + "_gt_" + local + ".png", object + " " + label);
        light[label]     = detail::read_mask(base + "_noisy_light_" + local + ".png", object + " " + label);
        heavy[label]     = detail::read_mask(base + "_noisy_heavy_" + local + ".png", object + " " + label);
      }
      BinaryMask const seg = detail::read_mask(base + "_seg.png", object);

      score_into(methods["GT-PCA"], [&] {
        return frame_score(pca_tree, object, perception::features_from_mask(merge_masks(gt_parts, object), pcfg));
      });
      score_into(methods["SEG"],
                 [&] { return frame_score(pca_tree, object, perception::features_from_mask(seg, pcfg)); });
      score_into(methods["NOISY-LIGHT"], [&] {
        return frame_score(part_tree, object,
                           perception::features_with_parts(merge_masks(light, object), light, pcfg));
      });
      score_into(methods["NOISY-HEAVY"], [&] {
        return frame_score(part_tree, object,
                           perception::features_with_parts(merge_masks(heavy, object), heavy, pcfg));
      });
    }
    series["GT"].push_back(gt);
    for (auto &[name, s] : methods)
    {
      series[name].push_back(std::move(s));
    }
  }

  BaselineReport report;
  auto add = [&](std::string const &label, std::string const &pred, std::string const &ref) {
    auto const result = eval::evaluate_dataset(series.at(ref), series.at(pred), srocc_literal);
    report.rows.push_back({label, result.mlcc, result.msrocc});
    for (auto const &w : result.warnings)
    {
      report.warnings.push_back(label + ": " + w);
    }
    report.details[label] = result;
  };
  add("GT vs GT-PCA", "GT-PCA", "GT");
  add("SEG vs GT", "SEG", "GT");
  add("SEG vs GT-PCA", "SEG", "GT-PCA");
  add("NOISY-LIGHT vs GT", "NOISY-LIGHT", "GT");
  add("NOISY-HEAVY vs GT", "NOISY-HEAVY", "GT");
  return report;
}

}  // namespace kgservo::dataset
