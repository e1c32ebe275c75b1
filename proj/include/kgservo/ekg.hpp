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
#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "kgservo/error.hpp"

namespace kgservo::ekg {

enum class TermKind
{
  IRI,
  Literal,
};

enum class Namespace
{
  SEM,
  REKGS,
  REKGR,
  DBR,
  XSD,
};

enum class Datatype
{
  String,
  Integer,
  Double,
  Timestamp,
};

constexpr std::string_view prefix_of(Namespace ns) noexcept
{
  switch (ns)
  {
  case Namespace::SEM: return "sem";
  case Namespace::REKGS: return "rekgs";
  case Namespace::REKGR: return "rekgr";
  case Namespace::DBR: return "dbr";
  case Namespace::XSD: return "xsd";
  }
  return "";
}

constexpr std::string_view namespace_uri(Namespace ns) noexcept
{
  switch (ns)
  {
  case Namespace::SEM: return "http://semanticweb.cs.vu.nl/2009/11/sem/";
  case Namespace::REKGS: return "http://kgservo.org/rekg/schema#";
  case Namespace::REKGR: return "http://kgservo.org/rekg/resource#";
  case Namespace::DBR: return "http://dbpedia.org/resource/";
  case Namespace::XSD: return "http://www.w3.org/2001/XMLSchema#";
  }
  return "";
}

constexpr std::string_view datatype_name(Datatype dt) noexcept
{
  switch (dt)
  {
  case Datatype::String: return "string";
  case Datatype::Integer: return "integer";
  case Datatype::Double: return "double";
  case Datatype::Timestamp: return "timestamp";
  }
  return "";
}

namespace detail {

inline bool iequals(std::string_view a, std::string_view b) noexcept
{
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

inline bool is_local_char(char c) noexcept
{
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

inline bool valid_local_name(std::string_view s) noexcept
{
  return !s.empty() && std::all_of(s.begin(), s.end(), is_local_char);
}

inline bool valid_integer(std::string_view s) noexcept
{
  std::int64_t v   = 0;
  auto         res = std::from_chars(s.data(), s.data() + s.size(), v);
  return !s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline bool valid_double(std::string_view s) noexcept
{
  double v   = 0.0;
  auto   res = std::from_chars(s.data(), s.data() + s.size(), v);
  return !s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::string format_double(double v)
{
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// An IRI (namespace + local name) or a typed literal (lexical value + datatype).
struct Term
{
  TermKind    kind     = TermKind::IRI;
  Namespace   ns       = Namespace::REKGR;
  std::string value;
  Datatype    datatype = Datatype::String;

  static Term iri(Namespace ns, std::string local)
  {
    if (ns == Namespace::XSD)
    {
      throw Error(ErrorCode::InvalidArgument, "xsd is reserved for literal datatypes");
    }
    if (!detail::valid_local_name(local))
    {
      throw Error(ErrorCode::InvalidArgument, "invalid local name '" + local + "'");
    }
    return Term{TermKind::IRI, ns, std::move(local), Datatype::String};
  }

  static Term literal(std::string lexical, Datatype dt = Datatype::String)
  {
    if ((dt == Datatype::Integer || dt == Datatype::Timestamp) && !detail::valid_integer(lexical))
    {
      throw Error(ErrorCode::InvalidArgument, "'" + lexical + "' is not an integer literal");
    }
    if (dt == Datatype::Double && !detail::valid_double(lexical))
    {
      throw Error(ErrorCode::InvalidArgument, "'" + lexical + "' is not a double literal");
    }
    return Term{TermKind::Literal, Namespace::XSD, std::move(lexical), dt};
  }

  static Term integer(std::int64_t v) { return literal(std::to_string(v), Datatype::Integer); }
  static Term real(double v) { return literal(detail::format_double(v), Datatype::Double); }
  static Term timestamp_ms(std::int64_t ms) { return literal(std::to_string(ms), Datatype::Timestamp); }

  bool is_iri() const noexcept { return kind == TermKind::IRI; }
  bool is_literal() const noexcept { return kind == TermKind::Literal; }

  std::string to_string() const
  {
    if (is_iri())
    {
      return std::string(prefix_of(ns)) + ":" + value;
    }
    std::string out = "\"";
    for (char c : value)
    {
      switch (c)
      {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
      }
    }
    out += "\"^^xsd:";
    out += datatype_name(datatype);
    return out;
  }

  friend auto operator<=>(Term const &, Term const &) = default;
  friend bool operator==(Term const &, Term const &)  = default;
};

namespace vocab {

inline Term sem(std::string local) { return Term::iri(Namespace::SEM, std::move(local)); }
inline Term rekgs(std::string local) { return Term::iri(Namespace::REKGS, std::move(local)); }
inline Term rekgr(std::string local) { return Term::iri(Namespace::REKGR, std::move(local)); }
inline Term dbr(std::string local) { return Term::iri(Namespace::DBR, std::move(local)); }

// concepts
inline Term Event() { return sem("Event"); }
inline Term Actor() { return sem("Actor"); }
inline Term Place() { return sem("Place"); }
inline Term Object() { return rekgs("Object"); }
inline Term Task() { return rekgs("Task"); }
inline Term BTreeNodeEvent() { return rekgs("BTreeNodeEvent"); }
inline Term GeometricConstraint() { return rekgs("GeometricConstraint"); }
inline Term Success() { return rekgs("Success"); }
inline Term Failure() { return rekgs("Failure"); }
inline Term Running() { return rekgs("Running"); }

// relations
inline Term hasActor() { return sem("hasActor"); }
inline Term hasPlace() { return sem("hasPlace"); }
inline Term hasBeginTimeStamp() { return sem("hasBeginTimeStamp"); }
inline Term hasEndTimeStamp() { return sem("hasEndTimeStamp"); }
inline Term hasObject() { return rekgs("hasObject"); }
inline Term hasStatus() { return rekgs("hasStatus"); }
inline Term nextEvent() { return rekgs("nextEvent"); }
inline Term hasConcurrentEvent() { return rekgs("hasConcurrentEvent"); }
inline Term isDescribedAs() { return rekgs("isDescribedAs"); }
inline Term instanceOf() { return rekgs("instanceOf"); }
inline Term sameAs() { return rekgs("sameAs"); }
inline Term category() { return rekgs("category"); }
inline Term hasBehaviorTree() { return rekgs("hasBehaviorTree"); }
inline Term hasConstraintKind() { return rekgs("hasConstraintKind"); }
inline Term hasWeight() { return rekgs("hasWeight"); }
inline Term hasFeatureValue() { return rekgs("hasFeatureValue"); }
inline Term hasTickIndex() { return rekgs("hasTickIndex"); }

// instances shared by every task graph
inline Term Robot() { return rekgr("Robot"); }
inline Term TableTopWorkspace() { return rekgr("Table_top_workspace"); }

}  // namespace vocab

struct Triple
{
  Term subject;
  Term predicate;
  Term object;

  friend auto operator<=>(Triple const &, Triple const &) = default;
  friend bool operator==(Triple const &, Triple const &)  = default;
};

inline void validate(Triple const &t)
{
  if (!t.subject.is_iri())
  {
    throw Error(ErrorCode::SchemaViolation, "subject must be an IRI: " + t.subject.to_string());
  }
  if (!t.predicate.is_iri() || (t.predicate.ns != Namespace::SEM && t.predicate.ns != Namespace::REKGS))
  {
    throw Error(ErrorCode::SchemaViolation, "predicate must be a sem: or rekgs: IRI, got " + t.predicate.to_string());
  }
}

/// Set of triples. Many readers may share a const Graph; writers need exclusive access.
class Graph
{
public:
  using container = std::set<Triple>;

  Graph() = default;
  explicit Graph(std::string id)
    : id_(std::move(id))
  {}

  std::string const &id() const noexcept { return id_; }
  void               set_id(std::string id) { id_ = std::move(id); }

  /// Returns true if the triple was new.
  bool insert(Triple t)
  {
    validate(t);
    return triples_.insert(std::move(t)).second;
  }

  bool insert(Term s, Term p, Term o) { return insert(Triple{std::move(s), std::move(p), std::move(o)}); }

  void merge(Graph const &other)
  {
    for (auto const &t : other)
    {
      triples_.insert(t);
    }
  }

  template <typename Range>
  void insert_all(Range const &range)
  {
    for (auto const &t : range)
    {
      insert(t);
    }
  }

  bool contains(Triple const &t) const { return triples_.count(t) != 0; }

  std::size_t size() const noexcept { return triples_.size(); }
  bool        empty() const noexcept { return triples_.empty(); }

  container::const_iterator begin() const noexcept { return triples_.begin(); }
  container::const_iterator end() const noexcept { return triples_.end(); }

  container const &triples() const noexcept { return triples_; }

  /// Objects o with (subject, predicate, o) present, in term order.
  std::vector<Term> objects(Term const &subject, Term const &predicate) const
  {
    std::vector<Term> out;
    auto              it = triples_.lower_bound(Triple{subject, predicate, Term{TermKind::IRI, Namespace::SEM, {}, {}}});
    for (; it != triples_.end() && it->subject == subject && it->predicate == predicate; ++it)
    {
      out.push_back(it->object);
    }
    return out;
  }

  friend bool operator==(Graph const &a, Graph const &b) { return a.id_ == b.id_ && a.triples_ == b.triples_; }

private:
  std::string id_;
  container   triples_;
};

// ---------------------------------------------------------------------------
// Text format: '@prefix' header lines, an optional '@graph "id" .' line, then
// one 'subject predicate object .' triple per line.

inline std::string serialize(Graph const &graph)
{
  std::string out;
  for (auto ns : {Namespace::SEM, Namespace::REKGS, Namespace::REKGR, Namespace::DBR, Namespace::XSD})
  {
    out += "@prefix ";
    out += prefix_of(ns);
    out += ": <";
    out += namespace_uri(ns);
    out += "> .\n";
  }
  if (!graph.id().empty())
  {
    out += "@graph " + Term::literal(graph.id()).to_string() + " .\n";
  }
  for (auto const &t : graph)
  {
    out += t.subject.to_string();
    out += ' ';
    out += t.predicate.to_string();
    out += ' ';
    out += t.object.to_string();
    out += " .\n";
  }
  return out;
}

namespace detail {

/// Cursor over one line (or one query string) with position reporting.
class Scanner
{
public:
  Scanner(std::string_view text, std::size_t line)
    : text_(text)
    , line_(line)
  {}

  [[noreturn]] void fail(std::string const &reason) const
  {
    throw Error(ErrorCode::ParseError,
                "line " + std::to_string(line_) + ", column " + std::to_string(pos_ + 1) + ": " + reason);
  }

  void skip_ws()
  {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
    {
      ++pos_;
    }
  }

  bool at_end()
  {
    skip_ws();
    return pos_ >= text_.size();
  }

  char peek()
  {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  bool consume(char c)
  {
    if (peek() == c)
    {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c)
  {
    if (!consume(c))
    {
      fail(std::string("expected '") + c + "'");
    }
  }

  std::string_view word()
  {
    skip_ws();
    std::size_t const start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != '{' &&
           text_[pos_] != '}')
    {
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  std::string_view identifier()
  {
    skip_ws();
    std::size_t const start = pos_;
    while (pos_ < text_.size() && is_local_char(text_[pos_]))
    {
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  Term term()
  {
    char const c = peek();
    if (c == '"')
    {
      return literal();
    }
    if (c == '\0')
    {
      fail("expected a term");
    }
    auto const prefix = identifier();
    if (prefix.empty() || !consume_raw(':'))
    {
      fail("expected prefixed name 'ns:local' or a quoted literal");
    }
    auto const ns    = namespace_for(prefix);
    auto const local = identifier();
    if (local.empty())
    {
      fail("empty local name");
    }
    if (ns == Namespace::XSD)
    {
      fail("xsd: names are only valid as literal datatypes");
    }
    return Term::iri(ns, std::string(local));
  }

  Term literal()
  {
    expect('"');
    std::string value;
    for (;;)
    {
      if (pos_ >= text_.size())
      {
        fail("unterminated string literal");
      }
      char c = text_[pos_++];
      if (c == '"')
      {
        break;
      }
      if (c == '\\')
      {
        if (pos_ >= text_.size())
        {
          fail("dangling escape");
        }
        char const e = text_[pos_++];
        switch (e)
        {
        case 'n': c = '\n'; break;
        case 'r': c = '\r'; break;
        case 't': c = '\t'; break;
        case '"': c = '"'; break;
        case '\\': c = '\\'; break;
        default: fail(std::string("unknown escape '\\") + e + "'");
        }
      }
      value += c;
    }
    Datatype dt = Datatype::String;
    if (pos_ + 1 < text_.size() && text_[pos_] == '^' && text_[pos_ + 1] == '^')
    {
      pos_ += 2;
      auto const prefix = identifier();
      if (!iequals(prefix, "xsd") || !consume_raw(':'))
      {
        fail("literal datatype must be xsd:<type>");
      }
      auto const name = identifier();
      if (name == "string")
      {
        dt = Datatype::String;
      }
      else if (name == "integer")
      {
        dt = Datatype::Integer;
      }
      else if (name == "double")
      {
        dt = Datatype::Double;
      }
      else if (name == "timestamp")
      {
        dt = Datatype::Timestamp;
      }
      else
      {
        fail("unsupported datatype xsd:" + std::string(name));
      }
    }
    try
    {
      return Term::literal(std::move(value), dt);
    }
    catch (Error const &e)
    {
      fail(e.detail());
    }
  }

  std::size_t position() const noexcept { return pos_; }

  bool consume_raw(char c)
  {
    if (pos_ < text_.size() && text_[pos_] == c)
    {
      ++pos_;
      return true;
    }
    return false;
  }

  Namespace namespace_for(std::string_view prefix) const
  {
    for (auto ns : {Namespace::SEM, Namespace::REKGS, Namespace::REKGR, Namespace::DBR, Namespace::XSD})
    {
      if (iequals(prefix, prefix_of(ns)))
      {
        return ns;
      }
    }
    fail("unknown prefix '" + std::string(prefix) + "'");
  }

private:
  std::string_view text_;
  std::size_t      line_;
  std::size_t      pos_ = 0;
};

}  // namespace detail

/// Parses the line-oriented graph format. Prefix names are matched
/// case-insensitively, so 'REKGR:Move' and 'rekgr:Move' denote the same IRI.
inline Graph parse(std::string_view text)
{
  Graph       graph;
  std::size_t line_no = 0;
  std::size_t start   = 0;
  while (start <= text.size())
  {
    std::size_t const end  = std::min(text.find('\n', start), text.size());
    std::string_view  line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;

    detail::Scanner sc(line, line_no);
    if (sc.at_end() || sc.peek() == '#')
    {
      if (end == text.size())
      {
        break;
      }
      continue;
    }
    if (sc.peek() == '@')
    {
      auto const directive = sc.word();
      if (directive == "@prefix")
      {
        auto const name = sc.identifier();
        if (!sc.consume_raw(':'))
        {
          sc.fail("expected 'name:' after @prefix");
        }
        auto const ns  = sc.namespace_for(name);
        auto const uri = sc.word();
        if (uri != "<" + std::string(namespace_uri(ns)) + ">")
        {
          sc.fail("prefix '" + std::string(name) + "' bound to unexpected namespace " + std::string(uri));
        }
      }
      else if (directive == "@graph")
      {
        auto const id = sc.literal();
        graph.set_id(id.value);
      }
      else
      {
        sc.fail("unknown directive " + std::string(directive));
      }
      sc.expect('.');
      if (!sc.at_end())
      {
        sc.fail("trailing characters after directive");
      }
    }
    else
    {
      Term s = sc.term();
      if (sc.peek() == '.' || sc.at_end())
      {
        sc.fail("missing predicate");
      }
      Term p = sc.term();
      if (sc.peek() == '.' || sc.at_end())
      {
        sc.fail("missing object");
      }
      Term o = sc.term();
      sc.expect('.');
      if (!sc.at_end())
      {
        sc.fail("trailing characters after triple");
      }
      try
      {
        graph.insert(Triple{std::move(s), std::move(p), std::move(o)});
      }
      catch (Error const &e)
      {
        sc.fail(e.what());
      }
    }
    if (end == text.size())
    {
      break;
    }
  }
  return graph;
}

// ---------------------------------------------------------------------------
// Basic graph pattern queries.

struct Variable
{
  std::string name;

  friend auto operator<=>(Variable const &, Variable const &) = default;
  friend bool operator==(Variable const &, Variable const &)  = default;
};

using PatternTerm = std::variant<Term, Variable>;

struct TriplePattern
{
  PatternTerm subject;
  PatternTerm predicate;
  PatternTerm object;
};

struct Pattern
{
  std::vector<TriplePattern> patterns;
  std::vector<std::string>   projection;

  /// Variables in order of first appearance.
  std::vector<std::string> variables() const
  {
    std::vector<std::string> out;
    auto                     note = [&out](PatternTerm const &t) {
      if (auto const *v = std::get_if<Variable>(&t))
      {
        if (std::find(out.begin(), out.end(), v->name) == out.end())
        {
          out.push_back(v->name);
        }
      }
    };
    for (auto const &tp : patterns)
    {
      note(tp.subject);
      note(tp.predicate);
      note(tp.object);
    }
    return out;
  }

  void validate() const
  {
    if (patterns.empty())
    {
      throw Error(ErrorCode::InvalidArgument, "pattern has no triple patterns");
    }
    auto const vars = variables();
    for (auto const &p : projection)
    {
      if (std::find(vars.begin(), vars.end(), p) == vars.end())
      {
        throw Error(ErrorCode::InvalidArgument, "projected variable ?" + p + " does not occur in the pattern");
      }
    }
  }
};

/// Distinct projected rows, sorted lexicographically by term.
struct QueryResult
{
  std::vector<std::string>       variables;
  std::vector<std::vector<Term>> rows;

  std::size_t size() const noexcept { return rows.size(); }
  bool        empty() const noexcept { return rows.empty(); }

  std::map<std::string, Term> binding(std::size_t row) const
  {
    std::map<std::string, Term> out;
    for (std::size_t i = 0; i < variables.size(); ++i)
    {
      out.emplace(variables[i], rows[row][i]);
    }
    return out;
  }
};

namespace detail {

class TripleIndex
{
public:
  explicit TripleIndex(std::span<Graph const *const> graphs)
  {
    std::set<Triple const *, PtrLess> seen;
    for (auto const *g : graphs)
    {
      for (auto const &t : *g)
      {
        if (seen.insert(&t).second)
        {
          all_.push_back(&t);
        }
      }
    }
    std::sort(all_.begin(), all_.end(), [](auto a, auto b) { return *a < *b; });
    all_.erase(std::unique(all_.begin(), all_.end(), [](auto a, auto b) { return *a == *b; }), all_.end());
    for (auto const *t : all_)
    {
      by_subject_[t->subject].push_back(t);
      by_predicate_[t->predicate].push_back(t);
      by_object_[t->object].push_back(t);
    }
  }

  std::vector<Triple const *> const &candidates(Term const *s, Term const *p, Term const *o) const
  {
    static std::vector<Triple const *> const none;
    auto lookup = [](auto const &map, Term const &key) -> std::vector<Triple const *> const & {
      auto it = map.find(key);
      return it == map.end() ? none : it->second;
    };
    std::vector<Triple const *> const *best = &all_;
    if (s)
    {
      best = &lookup(by_subject_, *s);
    }
    if (o)
    {
      auto const &c = lookup(by_object_, *o);
      best          = c.size() < best->size() ? &c : best;
    }
    if (p)
    {
      auto const &c = lookup(by_predicate_, *p);
      best          = c.size() < best->size() ? &c : best;
    }
    return *best;
  }

private:
  struct PtrLess
  {
    bool operator()(Triple const *a, Triple const *b) const { return *a < *b; }
  };

  std::vector<Triple const *>                         all_;
  std::map<Term, std::vector<Triple const *>>         by_subject_;
  std::map<Term, std::vector<Triple const *>>         by_predicate_;
  std::map<Term, std::vector<Triple const *>>         by_object_;
};

class Matcher
{
public:
  Matcher(Pattern const &pattern, TripleIndex const &index)
    : index_(index)
    , vars_(pattern.variables())
    , bound_(vars_.size(), nullptr)
  {
    for (auto const &tp : pattern.patterns)
    {
      patterns_.push_back({slot(tp.subject), slot(tp.predicate), slot(tp.object)});
    }
    order_ = plan();
    for (auto const &name : pattern.projection)
    {
      projection_.push_back(var_index(name));
    }
  }

  std::set<std::vector<Term>> run()
  {
    std::set<std::vector<Term>> rows;
    search(0, rows);
    return rows;
  }

private:
  struct Slot
  {
    Term        constant;
    int         var = -1;
  };
  struct Compiled
  {
    Slot s, p, o;
  };

  Slot slot(PatternTerm const &t)
  {
    if (auto const *v = std::get_if<Variable>(&t))
    {
      return {Term{}, var_index(v->name)};
    }
    return {std::get<Term>(t), -1};
  }

  int var_index(std::string const &name) const
  {
    auto it = std::find(vars_.begin(), vars_.end(), name);
    return static_cast<int>(it - vars_.begin());
  }

  // Greedy ordering: most constants first, then patterns sharing variables
  // with already placed ones.
  std::vector<std::size_t> plan() const
  {
    std::vector<std::size_t> order;
    std::vector<bool>        placed(patterns_.size(), false);
    std::vector<bool>        known(vars_.size(), false);
    for (std::size_t step = 0; step < patterns_.size(); ++step)
    {
      int         best_score = -1;
      std::size_t best       = 0;
      for (std::size_t i = 0; i < patterns_.size(); ++i)
      {
        if (placed[i])
        {
          continue;
        }
        int  score = 0;
        auto rate  = [&](Slot const &s) { score += (s.var < 0 || known[static_cast<std::size_t>(s.var)]) ? 1 : 0; };
        rate(patterns_[i].s);
        rate(patterns_[i].p);
        rate(patterns_[i].o);
        if (score > best_score)
        {
          best_score = score;
          best       = i;
        }
      }
      placed[best] = true;
      order.push_back(best);
      for (auto const *s : {&patterns_[best].s, &patterns_[best].p, &patterns_[best].o})
      {
        if (s->var >= 0)
        {
          known[static_cast<std::size_t>(s->var)] = true;
        }
      }
    }
    return order;
  }

  Term const *resolve(Slot const &s) const
  {
    return s.var < 0 ? &s.constant : bound_[static_cast<std::size_t>(s.var)];
  }

  bool unify(Slot const &s, Term const &value, std::vector<int> &newly)
  {
    if (s.var < 0)
    {
      return s.constant == value;
    }
    auto &b = bound_[static_cast<std::size_t>(s.var)];
    if (b)
    {
      return *b == value;
    }
    b = &value;
    newly.push_back(s.var);
    return true;
  }

  void search(std::size_t depth, std::set<std::vector<Term>> &rows)
  {
    if (depth == order_.size())
    {
      std::vector<Term> row;
      row.reserve(projection_.size());
      for (int v : projection_)
      {
        row.push_back(*bound_[static_cast<std::size_t>(v)]);
      }
      rows.insert(std::move(row));
      return;
    }
    auto const &tp = patterns_[order_[depth]];
    for (auto const *t : index_.candidates(resolve(tp.s), resolve(tp.p), resolve(tp.o)))
    {
      std::vector<int> newly;
      if (unify(tp.s, t->subject, newly) && unify(tp.p, t->predicate, newly) && unify(tp.o, t->object, newly))
      {
        search(depth + 1, rows);
      }
      for (int v : newly)
      {
        bound_[static_cast<std::size_t>(v)] = nullptr;
      }
    }
  }

  TripleIndex const        &index_;
  std::vector<std::string>  vars_;
  std::vector<Term const *> bound_;
  std::vector<Compiled>     patterns_;
  std::vector<std::size_t>  order_;
  std::vector<int>          projection_;
};

}  // namespace detail

inline QueryResult query(std::span<Graph const *const> graphs, Pattern const &pattern)
{
  pattern.validate();
  detail::TripleIndex index(graphs);
  detail::Matcher     matcher(pattern, index);
  auto                rows = matcher.run();
  return QueryResult{pattern.projection, {rows.begin(), rows.end()}};
}

inline QueryResult query(Graph const &graph, Pattern const &pattern)
{
  Graph const *one[] = {&graph};
  return query(std::span<Graph const *const>(one), pattern);
}

/// Parses 'SELECT ?a ?b WHERE { s p o . s p o }', 'SELECT * WHERE {...}', or a
/// bare '{ ... }' / triple-pattern list (projecting every variable).
inline Pattern parse_pattern(std::string_view text)
{
  detail::Scanner sc(text, 1);
  Pattern         pattern;
  bool            select_all = true;
  bool            braced     = false;

  if (sc.peek() != '{' && sc.peek() != '?' && sc.peek() != '"')
  {
    // SELECT form, or a bare pattern that starts with a prefixed name
    detail::Scanner probe(text, 1);
    auto const      first = probe.word();
    if (detail::iequals(first, "select"))
    {
      (void)sc.word();
      select_all = false;
      if (sc.consume('*'))
      {
        select_all = true;
      }
      else
      {
        while (sc.peek() == '?')
        {
          sc.consume('?');
          auto const name = sc.identifier();
          if (name.empty())
          {
            sc.fail("empty variable name");
          }
          pattern.projection.emplace_back(name);
        }
        if (pattern.projection.empty())
        {
          sc.fail("SELECT needs '*' or at least one ?variable");
        }
      }
      auto const where = sc.word();
      if (!detail::iequals(where, "where"))
      {
        sc.fail("expected WHERE");
      }
      sc.expect('{');
      braced = true;
    }
  }
  if (!braced && sc.consume('{'))
  {
    braced = true;
  }

  auto pattern_term = [&sc]() -> PatternTerm {
    if (sc.consume('?'))
    {
      auto const name = sc.identifier();
      if (name.empty())
      {
        sc.fail("empty variable name");
      }
      return Variable{std::string(name)};
    }
    return sc.term();
  };

  for (;;)
  {
    if (braced && sc.consume('}'))
    {
      break;
    }
    if (!braced && sc.at_end())
    {
      break;
    }
    if (sc.at_end())
    {
      sc.fail("missing '}'");
    }
    TriplePattern tp{pattern_term(), pattern_term(), pattern_term()};
    pattern.patterns.push_back(std::move(tp));
    if (!sc.consume('.'))
    {
      if (braced && sc.peek() == '}')
      {
        continue;
      }
      if (!braced && sc.at_end())
      {
        continue;
      }
      sc.fail("expected '.' between triple patterns");
    }
  }
  if (!sc.at_end())
  {
    sc.fail("trailing characters after pattern");
  }
  if (pattern.patterns.empty())
  {
    sc.fail("empty graph pattern");
  }
  if (select_all)
  {
    pattern.projection = pattern.variables();
  }
  try
  {
    pattern.validate();
  }
  catch (Error const &e)
  {
    throw Error(ErrorCode::ParseError, e.detail());
  }
  return pattern;
}

// ---------------------------------------------------------------------------
// Entity canonicalization against a bundled offline table.

struct CanonicalEntry
{
  std::string_view              local;
  std::string_view              dbr;
  std::vector<std::string_view> categories;
};

inline std::vector<CanonicalEntry> const &canonical_table()
{
  static std::vector<CanonicalEntry> const table = {
    {"Apple", "Apple", {"fruit", "food"}},
    {"Banana", "Banana", {"fruit", "food"}},
    {"Lemon", "Lemon", {"fruit", "food"}},
    {"Red_pepper", "Bell_pepper", {"vegetable", "food"}},
    {"Carrot", "Carrot", {"vegetable", "food"}},
    {"Tennis_ball", "Tennis_ball", {"sports equipment", "ball"}},
    {"Pen", "Pen", {"stationery", "writing implement"}},
    {"Marker", "Marker_pen", {"stationery", "writing implement"}},
    {"Umbrella", "Umbrella", {"utility", "rain gear"}},
    {"Cup", "Cup", {"utility", "container"}},
    {"Cereal_box", "Breakfast_cereal", {"food", "container"}},
  };
  return table;
}

/// sameAs and category triples for a known REKGR entity; empty otherwise.
inline std::set<Triple> canonicalize(Term const &entity)
{
  std::set<Triple> out;
  if (!entity.is_iri() || entity.ns != Namespace::REKGR)
  {
    return out;
  }
  for (auto const &entry : canonical_table())
  {
    if (entry.local == entity.value)
    {
      auto const db = vocab::dbr(std::string(entry.dbr));
      out.insert(Triple{entity, vocab::sameAs(), db});
      for (auto cat : entry.categories)
      {
        out.insert(Triple{db, vocab::category(), Term::literal(std::string(cat))});
      }
      break;
    }
  }
  return out;
}

/// "red pepper" -> "Red_pepper".
inline std::string entity_local_name(std::string_view label)
{
  std::string out;
  for (char c : label)
  {
    if (std::isspace(static_cast<unsigned char>(c)))
    {
      out += '_';
    }
    else if (detail::is_local_char(c))
    {
      out += c;
    }
  }
  if (!out.empty())
  {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  return out;
}

/// "Red_pepper" -> "red pepper".
inline std::string label_from_local(std::string_view local)
{
  std::string out;
  for (char c : local)
  {
    out += c == '_' ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

/// Concepts whose instances count as temporal events.
inline bool is_event_concept(Term const &t)
{
  return t == vocab::Event() || t == vocab::BTreeNodeEvent() || t == vocab::GeometricConstraint() ||
         t == vocab::Task();
}

/// Schema checks that cannot be enforced per triple: every REKGR node is an
/// instance of a concept, and every node linked by nextEvent or
/// hasConcurrentEvent is an event. Returns human-readable violations.
inline std::vector<std::string> schema_violations(Graph const &graph)
{
  std::vector<std::string> out;
  std::set<Term>           rekgr_nodes;
  std::set<Term>           events;
  std::map<Term, std::vector<Term>> types;
  for (auto const &t : graph)
  {
    for (auto const *node : {&t.subject, &t.object})
    {
      if (node->is_iri() && node->ns == Namespace::REKGR)
      {
        rekgr_nodes.insert(*node);
      }
    }
    if (t.predicate == vocab::instanceOf())
    {
      types[t.subject].push_back(t.object);
    }
    if (t.predicate == vocab::nextEvent() || t.predicate == vocab::hasConcurrentEvent())
    {
      events.insert(t.subject);
      events.insert(t.object);
    }
  }
  for (auto const &node : rekgr_nodes)
  {
    auto it = types.find(node);
    bool ok = it != types.end() && std::any_of(it->second.begin(), it->second.end(), [](Term const &c) {
                return c.is_iri() && (c.ns == Namespace::SEM || c.ns == Namespace::REKGS);
              });
    if (!ok)
    {
      out.push_back(node.to_string() + " has no instanceOf concept");
    }
  }
  for (auto const &node : events)
  {
    auto it = types.find(node);
    bool ok = it != types.end() && std::any_of(it->second.begin(), it->second.end(), is_event_concept);
    if (!ok)
    {
      out.push_back(node.to_string() + " participates in event relations but is not an event");
    }
  }
  return out;
}

}  // namespace kgservo::ekg
