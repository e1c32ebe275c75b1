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

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "kgservo/btree.hpp"
#include "kgservo/ekg.hpp"
#include "kgservo/error.hpp"
#include "kgservo/geometry.hpp"
#include "kgservo/perception.hpp"
#include "kgservo/servo.hpp"
#include "kgservo/sim.hpp"

namespace kgservo::task {

using geometry::HomogeneousPoint;

using btree::BTreeNode;
using btree::TickStatus;

/// Default weight of the parallel-line residual in a grasp stack. The
/// residual is sin(angle), so the weight sets how many pixels one radian of
/// misalignment counts for.
inline constexpr double kParWeight = 100.0;

struct GraspGoals
{
  HomogeneousPoint grip{320.0, 240.0, 1.0};
  HomogeneousPoint grip_dir{320.0, 340.0, 1.0};  // grip + gripper closing axis

  static GraspGoals for_camera(sim::PinholeCamera const &camera)
  {
    return {{camera.cx, camera.cy, 1.0}, {camera.cx, camera.cy + 100.0, 1.0}};
  }
};

/// One constraint over the grasp goals and the object's PCA features.
inline geometry::GeometricConstraint grasp_constraint(geometry::ConstraintKind kind, std::string const &prompt,
                                                      double par_weight = kParWeight)
{
  using geometry::ConstraintKind;
  std::string const c = prompt + ":center";
  std::string const m = prompt + ":major";
  switch (kind)
  {
  case ConstraintKind::p2p: return {kind, {"goal:grip", c}};
  case ConstraintKind::p2l: return {kind, {"goal:grip", c, m}};
  case ConstraintKind::l2l: return {kind, {"goal:grip", "goal:grip_dir", c, m}};
  case ConstraintKind::par: return {kind, {"goal:grip", "goal:grip_dir", c, m}, par_weight};
  }
  throw Error(ErrorCode::InvalidArgument, "unknown constraint kind");
}

inline std::string action_id(geometry::ConstraintKind kind)
{
  switch (kind)
  {
  case geometry::ConstraintKind::p2p: return "PP";
  case geometry::ConstraintKind::p2l: return "PL";
  case geometry::ConstraintKind::l2l: return "LL";
  case geometry::ConstraintKind::par: return "Par";
  }
  return "C";
}

/// Sequence "Task" [Parallel "Move" (all) [one action per constraint], Action "Grasp"].
inline BTreeNode grasp_tree(std::string const &prompt, std::vector<geometry::ConstraintKind> const &stack,
                            GraspGoals const &goals = {}, double par_weight = kParWeight)
{
  if (stack.empty())
  {
    throw Error(ErrorCode::InvalidArgument, "constraint stack is empty");
  }
  std::vector<BTreeNode> moves;
  std::set<std::string>  ids;
  for (auto kind : stack)
  {
    btree::ActionPayload payload;
    payload.constraints.push_back(grasp_constraint(kind, prompt, par_weight));
    payload.goals["grip"] = goals.grip;
    if (geometry::slot_count(kind) == 4)
    {
      payload.goals["grip_dir"] = goals.grip_dir;
    }
    std::string id = action_id(kind);
    for (int n = 2; !ids.insert(id).second; ++n)
    {
      id = action_id(kind) + std::to_string(n);
    }
    moves.push_back(BTreeNode::make_action(id, std::move(payload)));
  }
  std::size_t const m    = moves.size();
  BTreeNode         tree = BTreeNode::sequence(
    "Task", {BTreeNode::parallel("Move", std::move(moves), m), BTreeNode::make_action("Grasp")});
  btree::validate(tree);
  return tree;
}

/// "p2p,par" -> {p2p, par}.
inline std::vector<geometry::ConstraintKind> parse_stack(std::string const &text)
{
  std::vector<geometry::ConstraintKind> out;
  std::size_t                           start = 0;
  while (start <= text.size())
  {
    auto const end = std::min(text.find(',', start), text.size());
    out.push_back(geometry::parse_constraint_kind(text.substr(start, end - start)));
    start = end + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experience graphs

struct TaskExperience
{
  BTreeNode   tree;
  std::string prompt;
  std::string graph_id;
};

/// Tree and prompt from the first graph (in the given similarity order)
/// that carries a parseable behavior tree and an object bound by hasObject.
inline TaskExperience query_task(std::span<ekg::Graph const *const> graphs)
{
  using namespace ekg::vocab;
  if (graphs.empty())
  {
    throw Error(ErrorCode::NoUsableExperience, "no graphs retrieved");
  }
  auto const trees   = ekg::parse_pattern("SELECT ?t ?bt WHERE { ?t rekgs:hasBehaviorTree ?bt . }");
  auto const objects = ekg::parse_pattern("SELECT ?o WHERE { ?e rekgs:hasObject ?o . }");
  for (auto const *g : graphs)
  {
    std::optional<BTreeNode> tree;
    for (auto const &row : ekg::query(*g, trees).rows)
    {
      if (row[1].is_literal())
      {
        try
        {
          tree = btree::tree_parse(row[1].value);
          break;
        }
        catch (Error const &)
        {
        }
      }
    }
    if (!tree)
    {
      continue;
    }
    auto const bound = ekg::query(*g, objects);
    for (auto const &row : bound.rows)
    {
      if (row[0].is_iri())
      {
        return {std::move(*tree), ekg::label_from_local(row[0].value), g->id()};
      }
    }
  }
  throw Error(ErrorCode::NoUsableExperience,
              "none of " + std::to_string(graphs.size()) + " graphs holds both a behavior tree and an object");
}

inline TaskExperience query_task(std::vector<ekg::Graph> const &graphs)
{
  std::vector<ekg::Graph const *> ptrs;
  for (auto const &g : graphs)
  {
    ptrs.push_back(&g);
  }
  return query_task(std::span<ekg::Graph const *const>(ptrs));
}

/// Event graph of one task run: schema types for every tree node, the
/// object with its canonical links, control-to-constraint descriptions,
/// per-node begin/end timestamps, the tick triples and the tree itself.
inline ekg::Graph task_graph(BTreeNode const &tree, btree::TickTrace const &trace, std::string const &object_label,
                             std::string const &graph_id, bool canonical = true)
{
  using namespace ekg::vocab;
  ekg::Graph g(graph_id);
  g.insert(Robot(), instanceOf(), Actor());
  g.insert(TableTopWorkspace(), instanceOf(), Place());

  ekg::Term const object = rekgr(ekg::entity_local_name(object_label));
  g.insert(object, instanceOf(), Object());
  if (canonical)
  {
    g.insert_all(ekg::canonicalize(object));
  }

  ekg::Term const root = btree::node_term(tree.id);
  g.insert(root, instanceOf(), Task());
  g.insert(root, hasBehaviorTree(), ekg::Term::literal(btree::tree_serialize(tree)));
  g.insert(root, hasObject(), object);

  btree::for_each_node(tree, [&](BTreeNode const &n) {
    ekg::Term const self = btree::node_term(n.id);
    g.insert(self, instanceOf(), BTreeNodeEvent());
    g.insert(self, hasActor(), Robot());
    g.insert(self, hasPlace(), TableTopWorkspace());
    if (n.is_constraint_action())
    {
      g.insert(self, instanceOf(), GeometricConstraint());
      g.insert(self, hasObject(), object);
    }
    for (auto const &c : n.children)
    {
      if (c.is_constraint_action())
      {
        g.insert(self, isDescribedAs(), btree::node_term(c.id));
      }
    }
  });

  std::map<std::string, std::pair<std::int64_t, std::int64_t>> span;
  for (auto const &e : trace.entries())
  {
    auto [it, fresh] = span.try_emplace(e.node_id, e.timestamp_ms, e.timestamp_ms);
    if (!fresh)
    {
      it->second.first  = std::min(it->second.first, e.timestamp_ms);
      it->second.second = std::max(it->second.second, e.timestamp_ms);
    }
  }
  for (auto const &[id, t] : span)
  {
    g.insert(btree::node_term(id), hasBeginTimeStamp(), ekg::Term::timestamp_ms(t.first));
    g.insert(btree::node_term(id), hasEndTimeStamp(), ekg::Term::timestamp_ms(t.second));
  }
  g.insert_all(btree::trace_to_triples(tree, trace));
  auto const &entries = trace.entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it)
  {
    if (it->node_id == tree.id)
    {
      g.insert(root, hasStatus(), btree::status_term(it->status));
      break;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Trials

struct TrialConfig
{
  servo::ServoConfig           servo;
  perception::PerceptionConfig perception;
  std::string                  object;  // prompt of the manipulated object
  std::string                  graph_id  = "trial";
  bool                         canonical = true;
  bool                         paced     = false;  // sleep one control period per move
};

/// One servo run over the constraint actions active at the same time.
struct GroupRun
{
  std::vector<std::string> node_ids;
  servo::ServoResult       result;
};

struct TrialOutcome
{
  TickStatus            status = TickStatus::Running;
  std::vector<GroupRun> groups;
  btree::TickTrace      trace;
  ekg::Graph            graph;
  servo::Vector         q_final;
  int                   iterations  = 0;
  double                final_error = 0.0;
  std::string           reason;  // empty on success
  ErrorCode             failure = ErrorCode::InvalidArgument;

  bool succeeded() const noexcept { return status == TickStatus::Success; }
};

/// Converged -> Success, Running -> Running, anything else -> Failure.
inline TickStatus leaf_status(servo::ServoStatus s) noexcept
{
  switch (s)
  {
  case servo::ServoStatus::Converged: return TickStatus::Success;
  case servo::ServoStatus::Running:
  case servo::ServoStatus::Bootstrapping: return TickStatus::Running;
  default: return TickStatus::Failure;
  }
}

/// Ticks the tree; every set of simultaneously active constraint actions is
/// driven by one servo loop on their stacked error, and actions without
/// constraints (the gripper command) succeed when reached. The tick clock
/// advances one control period per robot move.
inline TrialOutcome run_trial(sim::KinematicChain const &chain, sim::PinholeCamera const &camera,
                              sim::MaskSource &source, BTreeNode const &tree, servo::Vector const &q0,
                              TrialConfig const &cfg)
{
  btree::validate(tree);
  cfg.servo.validate();
  TrialOutcome          out;
  std::set<std::string> completed, failed;
  servo::Vector         q        = q0;
  std::int64_t          clock_ms = 0;
  double const          period   = 1000.0 / cfg.servo.rate_hz;
  std::int64_t          moves    = 0;

  auto do_tick = [&](std::map<std::string, std::map<std::string, HomogeneousPoint>> features) {
    std::map<std::string, TickStatus> leaves;
    btree::for_each_node(tree, [&](BTreeNode const &n) {
      if (n.is_action())
      {
        leaves[n.id] = failed.count(n.id)      ? TickStatus::Failure
                       : completed.count(n.id) ? TickStatus::Success
                                               : TickStatus::Running;
      }
    });
    btree::TickOptions opts;
    opts.first_index  = out.trace.next_index();
    opts.timestamp_ms = clock_ms;
    opts.features     = std::move(features);
    auto result       = btree::tick(tree, leaves, opts);
    out.trace.append(result.trace);
    return result.status;
  };

  TickStatus status = do_tick({});
  while (status == TickStatus::Running)
  {
    auto const active = btree::active_actions(tree, completed, failed);
    if (active.empty())
    {
      break;
    }
    std::vector<std::string> group;
    bool                     instant = false;
    for (auto const *n : active)
    {
      if (n->is_constraint_action())
      {
        group.push_back(n->id);
      }
      else
      {
        completed.insert(n->id);
        instant = true;
      }
    }
    if (instant)
    {
      status = do_tick({});
      continue;
    }

    sim::SimPlant plant(chain, camera, source, tree, completed, q, cfg.perception, failed);
    servo::Plant  step = [&plant, &moves, &cfg, period](servo::Vector const &dq) {
      ++moves;
      if (cfg.paced)
      {
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(period));
      }
      return plant(dq);
    };
    GroupRun run{group, servo::servo_loop(step, q, cfg.servo)};
    q        = plant.q();
    clock_ms = static_cast<std::int64_t>(std::llround(static_cast<double>(moves) * period));

    std::map<std::string, std::map<std::string, HomogeneousPoint>> features;
    for (auto const &cc : plant.last_composed())
    {
      for (std::size_t i = 0; i < cc.points.size(); ++i)
      {
        features[cc.node_id][cc.constraint.slots[i]] = cc.points[i];
      }
    }
    auto const &state = run.result.state;
    out.iterations += state.iteration;
    out.final_error = servo::norm_inf(state.e);
    if (leaf_status(state.status) == TickStatus::Success)
    {
      completed.insert(group.begin(), group.end());
    }
    else
    {
      failed.insert(group.begin(), group.end());
      out.reason  = std::string(servo::to_string(state.status)) + ": " + state.reason;
      out.failure = state.status == servo::ServoStatus::FeatureLost ? ErrorCode::FeatureLost
                                                                    : ErrorCode::NumericalFailure;
    }
    out.groups.push_back(std::move(run));
    status = do_tick(std::move(features));
  }
  out.status  = status;
  out.q_final = q;
  out.graph   = task_graph(tree, out.trace, cfg.object, cfg.graph_id, cfg.canonical);
  if (status == TickStatus::Success)
  {
    out.reason.clear();
  }
  return out;
}

inline nlohmann::json verdict_json(TrialOutcome const &o)
{
  nlohmann::json j{{"status", std::string(btree::to_string(o.status))},
                   {"iterations", o.iterations},
                   {"final_error", o.final_error}};
  if (!o.succeeded())
  {
    j["reason"] = o.reason.empty() ? std::string("tree did not succeed") : o.reason;
    j["code"]   = std::string(to_string(o.failure));
  }
  return j;
}

}  // namespace kgservo::task
