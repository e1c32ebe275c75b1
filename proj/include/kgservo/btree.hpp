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
#include <cctype>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kgservo/ekg.hpp"
#include "kgservo/error.hpp"
#include "kgservo/geometry.hpp"

namespace kgservo::btree {

using geometry::GeometricConstraint;
using geometry::HomogeneousPoint;

enum class NodeKind
{
  Sequence,
  Fallback,
  Parallel,
  Action,
};

enum class TickStatus
{
  Success,
  Failure,
  Running,
};

constexpr std::string_view to_string(TickStatus s) noexcept
{
  switch (s)
  {
  case TickStatus::Success: return "Success";
  case TickStatus::Failure: return "Failure";
  case TickStatus::Running: return "Running";
  }
  return "?";
}

constexpr std::string_view to_string(NodeKind k) noexcept
{
  switch (k)
  {
  case NodeKind::Sequence: return "sequence";
  case NodeKind::Fallback: return "fallback";
  case NodeKind::Parallel: return "parallel";
  case NodeKind::Action: return "action";
  }
  return "?";
}

inline ekg::Term status_term(TickStatus s)
{
  switch (s)
  {
  case TickStatus::Success: return ekg::vocab::Success();
  case TickStatus::Failure: return ekg::vocab::Failure();
  case TickStatus::Running: return ekg::vocab::Running();
  }
  return ekg::vocab::Running();
}

/// Constraints an action node drives to zero and the goal-side features its
/// slots refer to as "goal:<name>". Actions without constraints are plain
/// robot operations (e.g. closing the gripper).
struct ActionPayload
{
  std::vector<GeometricConstraint>         constraints;
  std::map<std::string, HomogeneousPoint>  goals;

  friend bool operator==(ActionPayload const &, ActionPayload const &) = default;
};

struct BTreeNode
{
  NodeKind               kind = NodeKind::Action;
  std::string            id;
  std::size_t            threshold = 0;  // Parallel only; 0 means all children
  std::vector<BTreeNode> children;
  ActionPayload          action;

  static BTreeNode sequence(std::string id, std::vector<BTreeNode> children)
  {
    return {NodeKind::Sequence, std::move(id), 0, std::move(children), {}};
  }
  static BTreeNode fallback(std::string id, std::vector<BTreeNode> children)
  {
    return {NodeKind::Fallback, std::move(id), 0, std::move(children), {}};
  }
  static BTreeNode parallel(std::string id, std::vector<BTreeNode> children, std::size_t threshold = 0)
  {
    return {NodeKind::Parallel, std::move(id), threshold, std::move(children), {}};
  }
  static BTreeNode make_action(std::string id, ActionPayload payload = {})
  {
    return {NodeKind::Action, std::move(id), 0, {}, std::move(payload)};
  }

  bool is_action() const noexcept { return kind == NodeKind::Action; }
  bool is_constraint_action() const noexcept { return is_action() && !action.constraints.empty(); }

  std::size_t success_threshold() const noexcept
  {
    return threshold == 0 ? children.size() : threshold;
  }

  friend bool operator==(BTreeNode const &, BTreeNode const &) = default;
};

namespace detail {

inline void validate_node(BTreeNode const &node, std::set<std::string> &ids)
{
  if (!ekg::detail::valid_local_name(node.id))
  {
    throw Error(ErrorCode::InvalidArgument, "node id '" + node.id + "' must match [A-Za-z0-9_-]+");
  }
  if (!ids.insert(node.id).second)
  {
    throw Error(ErrorCode::InvalidArgument, "duplicate node id '" + node.id + "'");
  }
  if (node.is_action())
  {
    if (!node.children.empty())
    {
      throw Error(ErrorCode::InvalidArgument, "action '" + node.id + "' must be a leaf");
    }
    for (auto const &c : node.action.constraints)
    {
      c.validate();
    }
    return;
  }
  if (node.children.empty())
  {
    throw Error(ErrorCode::InvalidArgument, "control node '" + node.id + "' has no children");
  }
  if (node.kind == NodeKind::Parallel && node.threshold > node.children.size())
  {
    throw Error(ErrorCode::InvalidArgument, "parallel '" + node.id + "' threshold exceeds child count");
  }
  for (auto const &child : node.children)
  {
    validate_node(child, ids);
  }
}

}  // namespace detail

inline void validate(BTreeNode const &tree)
{
  std::set<std::string> ids;
  detail::validate_node(tree, ids);
}

inline BTreeNode const *find(BTreeNode const &tree, std::string_view id)
{
  if (tree.id == id)
  {
    return &tree;
  }
  for (auto const &child : tree.children)
  {
    if (auto const *hit = find(child, id))
    {
      return hit;
    }
  }
  return nullptr;
}

template <typename Fn>
void for_each_node(BTreeNode const &tree, Fn &&fn)
{
  fn(tree);
  for (auto const &child : tree.children)
  {
    for_each_node(child, fn);
  }
}

// ---------------------------------------------------------------------------
// Ticking

struct TraceEntry
{
  std::string                             node_id;
  TickStatus                              status       = TickStatus::Running;
  std::uint64_t                           tick_index   = 0;
  std::int64_t                            timestamp_ms = 0;
  std::map<std::string, HomogeneousPoint> features;  // observed slot values, actions only

  friend bool operator==(TraceEntry const &, TraceEntry const &) = default;
};

/// Append-only tick log with strictly increasing indices.
class TickTrace
{
public:
  std::size_t append(TraceEntry entry)
  {
    if (!entries_.empty() && entry.tick_index <= entries_.back().tick_index)
    {
      entry.tick_index = entries_.back().tick_index + 1;
    }
    entries_.push_back(std::move(entry));
    return entries_.size() - 1;
  }

  void append(TickTrace const &other)
  {
    for (auto const &e : other.entries_)
    {
      append(e);
    }
  }

  std::vector<TraceEntry> const &entries() const noexcept { return entries_; }
  std::size_t                    size() const noexcept { return entries_.size(); }
  bool                           empty() const noexcept { return entries_.empty(); }
  std::uint64_t next_index() const noexcept { return entries_.empty() ? 0 : entries_.back().tick_index + 1; }

  TraceEntry const *find(std::string_view id) const
  {
    for (auto const &e : entries_)
    {
      if (e.node_id == id)
      {
        return &e;
      }
    }
    return nullptr;
  }

  TraceEntry &entry(std::size_t i) { return entries_[i]; }

  friend bool operator==(TickTrace const &, TickTrace const &) = default;

private:
  std::vector<TraceEntry> entries_;
};

struct TickResult
{
  TickStatus status = TickStatus::Running;
  TickTrace  trace;
};

struct TickOptions
{
  std::uint64_t first_index  = 0;
  std::int64_t  timestamp_ms = 0;
  /// Per-action observed features copied into the trace.
  std::map<std::string, std::map<std::string, HomogeneousPoint>> features;
};

namespace detail {

class Ticker
{
public:
  Ticker(std::map<std::string, TickStatus> const &leaves, TickOptions const &opts)
    : leaves_(leaves)
    , opts_(opts)
    , next_(opts.first_index)
  {}

  TickStatus visit(BTreeNode const &node)
  {
    TraceEntry entry{node.id, TickStatus::Running, next_++, opts_.timestamp_ms, {}};
    if (node.is_action())
    {
      if (auto it = opts_.features.find(node.id); it != opts_.features.end())
      {
        entry.features = it->second;
      }
    }
    std::size_t const slot = trace_.append(std::move(entry));
    TickStatus        s    = TickStatus::Running;
    switch (node.kind)
    {
    case NodeKind::Action: {
      auto it = leaves_.find(node.id);
      if (it == leaves_.end())
      {
        throw Error(ErrorCode::MissingLeafResult, node.id);
      }
      s = it->second;
      break;
    }
    case NodeKind::Sequence:
      s = TickStatus::Success;
      for (auto const &child : node.children)
      {
        if (auto const cs = visit(child); cs != TickStatus::Success)
        {
          s = cs;
          break;
        }
      }
      break;
    case NodeKind::Fallback:
      s = TickStatus::Failure;
      for (auto const &child : node.children)
      {
        if (auto const cs = visit(child); cs != TickStatus::Failure)
        {
          s = cs;
          break;
        }
      }
      break;
    case NodeKind::Parallel: {
      std::size_t successes = 0;
      std::size_t failures  = 0;
      for (auto const &child : node.children)
      {
        auto const cs = visit(child);
        successes += cs == TickStatus::Success ? 1 : 0;
        failures += cs == TickStatus::Failure ? 1 : 0;
      }
      std::size_t const m = node.success_threshold();
      if (successes >= m)
      {
        s = TickStatus::Success;
      }
      else if (failures > node.children.size() - m)
      {
        s = TickStatus::Failure;
      }
      else
      {
        s = TickStatus::Running;
      }
      break;
    }
    }
    trace_.entry(slot).status = s;
    return s;
  }

  TickTrace take() { return std::move(trace_); }

private:
  std::map<std::string, TickStatus> const &leaves_;
  TickOptions const                       &opts_;
  std::uint64_t                            next_;
  TickTrace                                trace_;
};

}  // namespace detail

/// One tick from the root. Sequence stops at the first non-Success child,
/// Fallback at the first non-Failure child; Parallel ticks every child and
/// succeeds once `success_threshold()` children succeed. The trace lists
/// ticked nodes in visitation (pre-)order.
inline TickResult tick(BTreeNode const &tree, std::map<std::string, TickStatus> const &leaf_results,
                       TickOptions const &opts = {})
{
  detail::Ticker ticker(leaf_results, opts);
  TickStatus     s = ticker.visit(tree);
  return {s, ticker.take()};
}

/// Constraint actions that the next tick would run, given the set of actions
/// already completed. Visitation order.
inline std::vector<BTreeNode const *> active_actions(BTreeNode const &tree, std::set<std::string> const &completed,
                                                     std::set<std::string> const &failed = {})
{
  std::map<std::string, TickStatus> leaves;
  for_each_node(tree, [&](BTreeNode const &n) {
    if (n.is_action())
    {
      leaves[n.id] = failed.count(n.id)      ? TickStatus::Failure
                     : completed.count(n.id) ? TickStatus::Success
                                             : TickStatus::Running;
    }
  });
  auto const                     result = tick(tree, leaves);
  std::vector<BTreeNode const *> out;
  for (auto const &e : result.trace.entries())
  {
    auto const *node = find(tree, e.node_id);
    if (node->is_action() && e.status == TickStatus::Running)
    {
      out.push_back(node);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace to knowledge triples

inline ekg::Term node_term(std::string const &id) { return ekg::vocab::rekgr(id); }

inline std::string format_point(HomogeneousPoint const &p)
{
  return "(" + ekg::detail::format_double(p.x) + ", " + ekg::detail::format_double(p.y) + ", " +
         ekg::detail::format_double(p.w) + ")";
}

/// Triples for one or more ticks. Sequence/Fallback children ticked in one
/// pass are chained by nextEvent, Parallel nodes link every child through
/// hasConcurrentEvent, and each ticked child gets hasStatus. The root's own
/// status is not a child status and is left to the caller.
inline std::set<ekg::Triple> trace_to_triples(BTreeNode const &tree, TickTrace const &trace)
{
  using namespace ekg::vocab;
  std::set<ekg::Triple> out;

  std::vector<std::vector<TraceEntry const *>> passes;
  for (auto const &e : trace.entries())
  {
    if (!find(tree, e.node_id))
    {
      throw Error(ErrorCode::InconsistentTrace, "trace references unknown node '" + e.node_id + "'");
    }
    if (passes.empty() || e.node_id == tree.id)
    {
      passes.emplace_back();
    }
    passes.back().push_back(&e);
  }

  for (auto const &pass : passes)
  {
    std::map<std::string, TraceEntry const *> seen;
    for (auto const *e : pass)
    {
      seen[e->node_id] = e;
    }
    for (auto const *e : pass)
    {
      BTreeNode const &node = *find(tree, e->node_id);
      ekg::Term const  self = node_term(node.id);
      if (node.is_action())
      {
        for (auto const &c : node.action.constraints)
        {
          out.insert({self, hasConstraintKind(), ekg::Term::literal(std::string(geometry::to_string(c.kind)))});
          out.insert({self, hasWeight(), ekg::Term::real(c.weight)});
        }
        for (auto const &[name, p] : node.action.goals)
        {
          out.insert({self, hasFeatureValue(), ekg::Term::literal("goal:" + name + "=" + format_point(p))});
        }
        for (auto const &[slot, p] : e->features)
        {
          out.insert({self, hasFeatureValue(), ekg::Term::literal(slot + "=" + format_point(p))});
        }
        continue;
      }
      std::vector<TraceEntry const *> ticked;
      for (auto const &child : node.children)
      {
        if (auto it = seen.find(child.id); it != seen.end())
        {
          ticked.push_back(it->second);
        }
      }
      for (std::size_t i = 0; i < ticked.size(); ++i)
      {
        ekg::Term const child = node_term(ticked[i]->node_id);
        out.insert({child, hasStatus(), status_term(ticked[i]->status)});
        if (node.kind == NodeKind::Parallel)
        {
          out.insert({self, hasConcurrentEvent(), child});
        }
        else if (i + 1 < ticked.size())
        {
          out.insert({child, nextEvent(), node_term(ticked[i + 1]->node_id)});
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// S-expression text form:
//   (sequence "Task" (parallel "Move" 2 (action "PP" (constraint p2p 1 "goal:grip" "pen:center")
//                                          (goal "grip" 320 240 1))) ...)

namespace detail {

inline std::string quote_atom(std::string_view s)
{
  std::string out = "\"";
  for (char c : s)
  {
    if (c == '"' || c == '\\')
    {
      out += '\\';
    }
    out += c;
  }
  return out + "\"";
}

inline void write_node(std::string &out, BTreeNode const &node, int depth)
{
  std::string const pad(static_cast<std::size_t>(depth) * 2, ' ');
  out += pad + "(" + std::string(to_string(node.kind)) + " " + quote_atom(node.id);
  if (node.kind == NodeKind::Parallel)
  {
    out += " " + std::to_string(node.threshold);
  }
  if (node.is_action())
  {
    for (auto const &c : node.action.constraints)
    {
      out += "\n" + pad + "  (constraint " + std::string(geometry::to_string(c.kind)) + " " +
             ekg::detail::format_double(c.weight);
      for (auto const &s : c.slots)
      {
        out += " " + quote_atom(s);
      }
      out += ")";
    }
    for (auto const &[name, p] : node.action.goals)
    {
      out += "\n" + pad + "  (goal " + quote_atom(name) + " " + ekg::detail::format_double(p.x) + " " +
             ekg::detail::format_double(p.y) + " " + ekg::detail::format_double(p.w) + ")";
    }
  }
  for (auto const &child : node.children)
  {
    out += "\n";
    write_node(out, child, depth + 1);
  }
  out += ")";
}

class SexprParser
{
public:
  explicit SexprParser(std::string_view text)
    : text_(text)
  {}

  BTreeNode parse_root()
  {
    BTreeNode node = parse_node();
    skip_ws();
    if (pos_ != text_.size())
    {
      fail("trailing characters after tree");
    }
    return node;
  }

private:
  [[noreturn]] void fail(std::string const &why) const
  {
    throw Error(ErrorCode::ParseError, "offset " + std::to_string(pos_) + ": " + why);
  }

  void skip_ws()
  {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
    {
      ++pos_;
    }
  }

  bool peek(char c)
  {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  void expect(char c)
  {
    if (!peek(c))
    {
      fail(std::string("expected '") + c + "'");
    }
    ++pos_;
  }

  std::string symbol()
  {
    skip_ws();
    std::size_t const start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
    {
      ++pos_;
    }
    if (start == pos_)
    {
      fail("expected a symbol");
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string string_literal()
  {
    expect('"');
    std::string out;
    while (pos_ < text_.size() && text_[pos_] != '"')
    {
      if (text_[pos_] == '\\' && pos_ + 1 < text_.size())
      {
        ++pos_;
      }
      out += text_[pos_++];
    }
    if (pos_ >= text_.size())
    {
      fail("unterminated string");
    }
    ++pos_;
    return out;
  }

  double number()
  {
    skip_ws();
    std::size_t const start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != ')' &&
           text_[pos_] != '(')
    {
      ++pos_;
    }
    double      v   = 0.0;
    auto const  tok = text_.substr(start, pos_ - start);
    auto const  res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    {
      pos_ = start;
      fail("expected a number");
    }
    return v;
  }

  BTreeNode parse_node()
  {
    expect('(');
    auto const kind_word = symbol();
    BTreeNode  node;
    if (kind_word == "sequence")
    {
      node.kind = NodeKind::Sequence;
    }
    else if (kind_word == "fallback")
    {
      node.kind = NodeKind::Fallback;
    }
    else if (kind_word == "parallel")
    {
      node.kind = NodeKind::Parallel;
    }
    else if (kind_word == "action")
    {
      node.kind = NodeKind::Action;
    }
    else
    {
      fail("unknown node kind '" + kind_word + "'");
    }
    node.id = string_literal();
    if (node.kind == NodeKind::Parallel)
    {
      double const m = number();
      if (m < 0 || m != static_cast<double>(static_cast<std::size_t>(m)))
      {
        fail("parallel threshold must be a non-negative integer");
      }
      node.threshold = static_cast<std::size_t>(m);
    }
    while (!peek(')'))
    {
      if (pos_ >= text_.size())
      {
        fail("unexpected end of tree text");
      }
      if (node.is_action())
      {
        std::size_t const save = pos_;
        expect('(');
        auto const attr = symbol();
        if (attr == "constraint")
        {
          GeometricConstraint c;
          try
          {
            c.kind = geometry::parse_constraint_kind(symbol());
          }
          catch (Error const &e)
          {
            fail(e.detail());
          }
          c.weight = number();
          while (!peek(')'))
          {
            if (pos_ >= text_.size())
            {
              fail("unexpected end inside constraint");
            }
            c.slots.push_back(string_literal());
          }
          expect(')');
          node.action.constraints.push_back(std::move(c));
        }
        else if (attr == "goal")
        {
          auto const   name = string_literal();
          double const x    = number();
          double const y    = number();
          double const w    = number();
          expect(')');
          node.action.goals[name] = HomogeneousPoint{x, y, w};
        }
        else
        {
          pos_ = save;
          fail("unknown action attribute '" + attr + "'");
        }
      }
      else
      {
        node.children.push_back(parse_node());
      }
    }
    expect(')');
    return node;
  }

  std::string_view text_;
  std::size_t      pos_ = 0;
};

}  // namespace detail

inline std::string tree_serialize(BTreeNode const &tree)
{
  std::string out;
  detail::write_node(out, tree, 0);
  return out;
}

inline BTreeNode tree_parse(std::string_view text)
{
  detail::SexprParser parser(text);
  BTreeNode           tree = parser.parse_root();
  try
  {
    validate(tree);
  }
  catch (Error const &e)
  {
    throw Error(ErrorCode::ParseError, e.detail());
  }
  return tree;
}

}  // namespace kgservo::btree
