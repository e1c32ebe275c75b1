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

#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sys/stat.h>

#include "common/helpers.hpp"
#include "common/oracles.hpp"
#include "kgservo/btree.hpp"
#include "kgservo/ekg.hpp"
#include "kgservo/memory.hpp"
#include "kgservo/task.hpp"

namespace {

using namespace kgservo;
using namespace kgservo::ekg::vocab;
using btree::BTreeNode;
using btree::TickStatus;
using ekg::Namespace;
using ekg::Term;
using ekg::Triple;
namespace oracle = kgservo_test::oracle;
using kgservo_test::TempDir;

constexpr auto S = TickStatus::Success;
constexpr auto F = TickStatus::Failure;
constexpr auto R = TickStatus::Running;

ekg::Graph moving_graph()
{
  ekg::Graph g;
  g.insert(rekgr("Move"), hasActor(), rekgr("Robot"));
  g.insert(rekgr("Move"), hasObject(), rekgr("Pen"));
  g.insert(rekgr("Move"), hasPlace(), rekgr("Table_top_workspace"));
  g.insert(rekgr("Move"), instanceOf(), Event());
  g.insert(rekgr("Pen"), instanceOf(), Object());
  return g;
}

// ---------------------------------------------------------------------------
// ekg: terms and graphs

TEST(Ekg, TermValidation)
{
  EXPECT_CODE(Term::iri(Namespace::REKGR, "has space"), InvalidArgument);
  EXPECT_CODE(Term::iri(Namespace::XSD, "string"), InvalidArgument);
  EXPECT_CODE(Term::literal("1.5", ekg::Datatype::Integer), InvalidArgument);
  EXPECT_EQ(Term::integer(-7).to_string(), "\"-7\"^^xsd:integer");
  EXPECT_EQ(Term::literal("a\"b\\c\nd").to_string(), "\"a\\\"b\\\\c\\nd\"^^xsd:string");
  EXPECT_EQ(rekgr("Move").to_string(), "rekgr:Move");
}

TEST(Ekg, InsertIsSetSemantics)
{
  ekg::Graph g;
  EXPECT_TRUE(g.insert(rekgr("Move"), hasActor(), rekgr("Robot")));
  EXPECT_EQ(g.size(), 1u);
  EXPECT_FALSE(g.insert(rekgr("Move"), hasActor(), rekgr("Robot")));
  EXPECT_EQ(g.size(), 1u);
}

TEST(Ekg, SchemaRules)
{
  ekg::Graph g;
  EXPECT_CODE(g.insert(rekgr("Move"), dbr("Apple"), rekgr("Robot")), SchemaViolation);
  EXPECT_CODE(g.insert(Term::literal("x"), hasActor(), rekgr("Robot")), SchemaViolation);
  EXPECT_TRUE(g.empty());
}

TEST(Ekg, InsertOrderDoesNotMatter)
{
  auto const base = moving_graph();
  std::vector<Triple> triples(base.begin(), base.end());
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i)
  {
    std::shuffle(triples.begin(), triples.end(), rng);
    ekg::Graph g;
    for (auto const &t : triples)
    {
      g.insert(t);
      g.insert(t);
    }
    EXPECT_EQ(g, base);
  }
}

TEST(Ekg, SerializeRoundTrip)
{
  ekg::Graph const empty;
  auto const       text = ekg::serialize(empty);
  EXPECT_EQ(ekg::parse(text), empty);

  auto g = moving_graph();
  g.set_id("demo \"7\"");
  g.insert(rekgr("Move"), hasBeginTimeStamp(), Term::timestamp_ms(1700000000000));
  g.insert(rekgr("Move"), hasWeight(), Term::real(0.1));
  g.insert(rekgr("Move"), hasFeatureValue(), Term::literal("tab\there\r\n\\ \"q\""));
  EXPECT_EQ(ekg::parse(ekg::serialize(g)), g);
}

TEST(Ekg, ParseErrorsCarryLineNumbers)
{
  std::string const text = "# comment\nREKGR:Move SEM:hasActor REKGR:Robot .\nREKGR:Move SEM:hasActor\n";
  try
  {
    ekg::parse(text);
    FAIL() << "expected ParseError";
  }
  catch (Error const &e)
  {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(e.detail().find("line 3"), std::string::npos) << e.detail();
  }
  EXPECT_CODE(ekg::parse("rekgr:Move dbr:x rekgr:Robot ."), ParseError);
  EXPECT_CODE(ekg::parse("rekgr:Move sem:hasActor rekgr:Robot"), ParseError);
  EXPECT_CODE(ekg::parse("foo:Move sem:hasActor rekgr:Robot ."), ParseError);
  EXPECT_CODE(ekg::parse("rekgr:A sem:hasActor \"unterminated ."), ParseError);
  // upper-case prefixes are accepted
  EXPECT_EQ(ekg::parse("REKGR:Move SEM:hasActor REKGR:Robot .").size(), 1u);
}

Term random_term(std::mt19937_64 &rng, bool allow_literal)
{
  static std::vector<std::string> const names{"Move", "Grasp", "Robot", "Pen", "PP", "Par", "Table_top_workspace",
                                              "a-b", "x_1", "Task"};
  static std::vector<std::string> const text{"", "pen", "a \"quoted\" word", "back\\slash", "line\nbreak",
                                             "tab\t", "(320, 240, 1)", "unicode \xc3\xa9"};
  std::uniform_int_distribution<int> pick(0, 100);
  int const kind = pick(rng) % (allow_literal ? 8 : 4);
  auto      name = names[static_cast<std::size_t>(pick(rng)) % names.size()];
  switch (kind)
  {
  case 0: return rekgr(name);
  case 1: return rekgs(name);
  case 2: return sem(name);
  case 3: return dbr(name);
  case 4: return Term::literal(text[static_cast<std::size_t>(pick(rng)) % text.size()]);
  case 5: return Term::integer(pick(rng) - 50);
  case 6: return Term::real((pick(rng) - 50) / 7.0);
  default: return Term::timestamp_ms(pick(rng) * 1000);
  }
}

Term random_predicate(std::mt19937_64 &rng)
{
  static std::vector<Term> const preds{hasActor(), hasPlace(), hasObject(), hasStatus(), nextEvent(), instanceOf(),
                                       sameAs(), category(), isDescribedAs()};
  return preds[rng() % preds.size()];
}

ekg::Graph random_graph(std::mt19937_64 &rng, std::size_t max_triples)
{
  ekg::Graph g;
  std::size_t const n = rng() % (max_triples + 1);
  for (std::size_t i = 0; i < n; ++i)
  {
    g.insert(random_term(rng, false), random_predicate(rng), random_term(rng, true));
  }
  return g;
}

TEST(Ekg, RandomRoundTrip)
{
  std::mt19937_64 rng(101);
  for (int i = 0; i < 100; ++i)
  {
    auto g = random_graph(rng, 200);
    if (i % 3 == 0)
    {
      g.set_id("g" + std::to_string(i));
    }
    EXPECT_EQ(ekg::parse(ekg::serialize(g)), g);
  }
}

// ---------------------------------------------------------------------------
// ekg: queries

TEST(Ekg, QueryMovingExample)
{
  auto const g = moving_graph();
  auto const r = ekg::query(g, ekg::parse_pattern("SELECT ?e WHERE { ?e sem:hasActor rekgr:Robot . }"));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r.rows[0][0], rekgr("Move"));
  EXPECT_TRUE(ekg::query(g, ekg::parse_pattern("{ ?e sem:hasActor rekgr:Pen }")).empty());
}

TEST(Ekg, QueryJoinAndOrdering)
{
  ekg::Graph g;
  g.insert(rekgr("Move"), isDescribedAs(), rekgr("Par"));
  g.insert(rekgr("Move"), isDescribedAs(), rekgr("PP"));
  g.insert(rekgr("Move"), hasActor(), rekgr("Robot"));
  g.insert(rekgr("Grasp"), isDescribedAs(), rekgr("PL"));
  auto const p = ekg::parse_pattern(
    "SELECT ?e ?c WHERE { ?e rekgs:isDescribedAs ?c . ?e sem:hasActor rekgr:Robot . }");
  auto const r = ekg::query(g, p);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r.rows[0][1], rekgr("PP"));
  EXPECT_EQ(r.rows[1][1], rekgr("Par"));
  std::vector<Triple> triples(g.begin(), g.end());
  auto const ref = oracle::query(triples, p);
  EXPECT_EQ(std::vector<std::vector<Term>>(ref.begin(), ref.end()), r.rows);
  EXPECT_EQ(r.binding(0).at("e"), rekgr("Move"));
}

TEST(Ekg, QueryAcrossGraphs)
{
  ekg::Graph a, b;
  a.insert(rekgr("PP"), hasObject(), rekgr("Apple"));
  b.insert(rekgr("Apple"), sameAs(), dbr("Apple"));
  ekg::Graph const *both[] = {&a, &b};
  auto const r = ekg::query(std::span<ekg::Graph const *const>(both),
                            ekg::parse_pattern("SELECT ?f WHERE { rekgr:PP rekgs:hasObject ?o . ?o rekgs:sameAs ?f . }"));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r.rows[0][0], dbr("Apple"));
}

TEST(Ekg, PatternParseErrors)
{
  EXPECT_CODE(ekg::parse_pattern("SELECT ?x WHERE { ?e sem:hasActor }"), ParseError);
  EXPECT_CODE(ekg::parse_pattern("SELECT ?x WHERE { ?e sem:hasActor ?y . }"), ParseError);
  EXPECT_CODE(ekg::parse_pattern("SELECT ?e WHERE { ?e sem:hasActor ?y"), ParseError);
  EXPECT_CODE(ekg::parse_pattern(""), ParseError);
  auto const star = ekg::parse_pattern("SELECT * WHERE { ?a ?p ?b . }");
  EXPECT_EQ(star.projection, (std::vector<std::string>{"a", "p", "b"}));
}

ekg::Pattern random_pattern(std::mt19937_64 &rng, std::vector<Triple> const &triples)
{
  static std::vector<std::string> const vars{"a", "b", "c"};
  ekg::Pattern p;
  std::size_t const n = 1 + rng() % 3;
  for (std::size_t i = 0; i < n; ++i)
  {
    Triple const anchor = triples.empty() ? Triple{rekgr("X"), hasActor(), rekgr("Y")} : triples[rng() % triples.size()];
    auto         slot   = [&](Term const &t) -> ekg::PatternTerm {
      if (rng() % 2 == 0)
      {
        return ekg::Variable{vars[rng() % vars.size()]};
      }
      return t;
    };
    p.patterns.push_back({slot(anchor.subject), slot(anchor.predicate), slot(anchor.object)});
  }
  auto all = p.variables();
  if (all.empty())
  {
    p.patterns[0].subject = ekg::Variable{"a"};
    all                   = p.variables();
  }
  for (auto const &v : all)
  {
    if (p.projection.empty() || rng() % 3 != 0)
    {
      p.projection.push_back(v);
    }
  }
  return p;
}

TEST(Ekg, QueryMatchesNestedLoopOracle)
{
  std::mt19937_64 rng(103);
  for (int i = 0; i < 200; ++i)
  {
    auto const          g = random_graph(rng, 50);
    std::vector<Triple> triples(g.begin(), g.end());
    auto const          p   = random_pattern(rng, triples);
    auto const          ref = oracle::query(triples, p);
    EXPECT_EQ(ekg::query(g, p).rows, std::vector<std::vector<Term>>(ref.begin(), ref.end()));
  }
}

TEST(Ekg, Canonicalize)
{
  auto const apple = ekg::canonicalize(rekgr("Apple"));
  EXPECT_TRUE(apple.count({rekgr("Apple"), sameAs(), dbr("Apple")}));
  EXPECT_TRUE(apple.count({dbr("Apple"), category(), Term::literal("fruit")}));
  auto const pen = ekg::canonicalize(rekgr("Pen"));
  EXPECT_TRUE(pen.count({rekgr("Pen"), sameAs(), dbr("Pen")}));
  EXPECT_TRUE(pen.count({dbr("Pen"), category(), Term::literal("stationery")}));
  EXPECT_TRUE(ekg::canonicalize(rekgr("Spaceship")).empty());
  EXPECT_TRUE(ekg::canonicalize(dbr("Apple")).empty());
  EXPECT_EQ(ekg::entity_local_name("red pepper"), "Red_pepper");
  EXPECT_EQ(ekg::label_from_local("Red_pepper"), "red pepper");
}

TEST(Ekg, SchemaViolations)
{
  auto g = moving_graph();
  g.insert(rekgr("Robot"), instanceOf(), Actor());
  g.insert(rekgr("Table_top_workspace"), instanceOf(), Place());
  EXPECT_TRUE(ekg::schema_violations(g).empty());
  g.insert(rekgr("Move"), nextEvent(), rekgr("Pen"));
  auto const v = ekg::schema_violations(g);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("rekgr:Pen"), std::string::npos);
}

// ---------------------------------------------------------------------------
// btree

BTreeNode leaf(std::string id) { return BTreeNode::make_action(std::move(id)); }

std::vector<std::string> trace_ids(btree::TickTrace const &t)
{
  std::vector<std::string> out;
  for (auto const &e : t.entries())
  {
    out.push_back(e.node_id);
  }
  return out;
}

TEST(BTree, SequenceFallbackParallelExamples)
{
  auto const seq = BTreeNode::sequence("Seq", {leaf("A"), leaf("B")});
  auto const r1  = btree::tick(seq, {{"A", S}, {"B", S}});
  EXPECT_EQ(r1.status, S);
  EXPECT_EQ(trace_ids(r1.trace), (std::vector<std::string>{"Seq", "A", "B"}));

  auto const fb = BTreeNode::fallback("Fb", {leaf("A"), leaf("B"), leaf("C")});
  auto const r2 = btree::tick(fb, {{"A", F}, {"B", S}, {"C", S}});
  EXPECT_EQ(r2.status, S);
  EXPECT_EQ(r2.trace.find("C"), nullptr);

  auto const par = BTreeNode::parallel("Par", {leaf("A"), leaf("B"), leaf("C")}, 2);
  EXPECT_EQ(btree::tick(par, {{"A", S}, {"B", F}, {"C", S}}).status, S);
  EXPECT_EQ(btree::tick(par, {{"A", S}, {"B", F}, {"C", R}}).status, R);
  EXPECT_EQ(btree::tick(par, {{"A", F}, {"B", F}, {"C", S}}).status, F);

  EXPECT_CODE(btree::tick(seq, {{"A", S}}), MissingLeafResult);
}

TEST(BTree, TraceIndicesIncrease)
{
  auto const tree = BTreeNode::sequence("T", {leaf("A"), BTreeNode::parallel("P", {leaf("B"), leaf("C")})});
  btree::TickOptions opts;
  opts.first_index = 40;
  auto const r     = btree::tick(tree, {{"A", S}, {"B", S}, {"C", R}}, opts);
  std::uint64_t expect = 40;
  for (auto const &e : r.trace.entries())
  {
    EXPECT_EQ(e.tick_index, expect++);
  }
  btree::TickTrace t;
  t.append(r.trace);
  t.append(r.trace);
  EXPECT_EQ(t.size(), 10u);
  EXPECT_EQ(t.entries()[5].tick_index, 45u);
}

TEST(BTree, Validation)
{
  EXPECT_CODE(btree::validate(BTreeNode::sequence("S", {leaf("A"), leaf("A")})), InvalidArgument);
  EXPECT_CODE(btree::validate(BTreeNode::parallel("P", {leaf("A")}, 3)), InvalidArgument);
  EXPECT_CODE(btree::validate(BTreeNode::sequence("S", {})), InvalidArgument);
}

std::size_t count_predicate(std::set<Triple> const &ts, Term const &p)
{
  return static_cast<std::size_t>(std::count_if(ts.begin(), ts.end(), [&](Triple const &t) { return t.predicate == p; }));
}

TEST(BTree, TriplesForSequenceFallbackParallel)
{
  auto const seq = BTreeNode::sequence("Seq", {leaf("A"), leaf("B"), leaf("C")});
  auto const t1  = btree::trace_to_triples(seq, btree::tick(seq, {{"A", S}, {"B", S}, {"C", S}}).trace);
  EXPECT_EQ(count_predicate(t1, nextEvent()), 2u);
  EXPECT_EQ(count_predicate(t1, hasStatus()), 3u);
  EXPECT_EQ(t1.size(), 5u);

  auto const fb = BTreeNode::fallback("Fb", {leaf("A"), leaf("B")});
  auto const t2 = btree::trace_to_triples(fb, btree::tick(fb, {{"A", F}, {"B", S}}).trace);
  EXPECT_EQ(t2, (std::set<Triple>{{rekgr("A"), nextEvent(), rekgr("B")},
                                  {rekgr("A"), hasStatus(), Failure()},
                                  {rekgr("B"), hasStatus(), Success()}}));

  auto const par = BTreeNode::parallel("Par", {leaf("A"), leaf("B")});
  auto const t3  = btree::trace_to_triples(par, btree::tick(par, {{"A", S}, {"B", R}}).trace);
  EXPECT_EQ(count_predicate(t3, hasConcurrentEvent()), 2u);
  EXPECT_EQ(count_predicate(t3, hasStatus()), 2u);
  EXPECT_EQ(t3.size(), 4u);
}

TEST(BTree, TriplesRejectForeignTrace)
{
  btree::TickTrace t;
  t.append({"Ghost", S, 0, 0, {}});
  EXPECT_CODE(btree::trace_to_triples(leaf("A"), t), InconsistentTrace);
}

TEST(BTree, ActionPayloadTriples)
{
  btree::ActionPayload p;
  p.constraints.push_back({geometry::ConstraintKind::p2p, {"goal:grip", "pen:center"}});
  p.goals["grip"] = {320, 240, 1};
  auto const          tree = BTreeNode::sequence("T", {BTreeNode::make_action("PP", p)});
  btree::TickOptions  opts;
  opts.features["PP"]["pen:center"] = {300.5, 200, 1};
  auto const ts = btree::trace_to_triples(tree, btree::tick(tree, {{"PP", R}}, opts).trace);
  EXPECT_TRUE(ts.count({rekgr("PP"), hasConstraintKind(), Term::literal("p2p")}));
  EXPECT_TRUE(ts.count({rekgr("PP"), hasWeight(), Term::real(1.0)}));
  EXPECT_TRUE(ts.count({rekgr("PP"), hasFeatureValue(), Term::literal("goal:grip=(320, 240, 1)")}));
  EXPECT_TRUE(ts.count({rekgr("PP"), hasFeatureValue(), Term::literal("pen:center=(300.5, 200, 1)")}));
}

TEST(BTree, SequenceTreesMatchConstruction)
{
  // every sequence tree of depth <= 2 with <= 4 children per node
  std::vector<BTreeNode> trees;
  for (int n = 1; n <= 4; ++n)
  {
    std::vector<BTreeNode> kids;
    for (int i = 0; i < n; ++i)
    {
      kids.push_back(leaf("L" + std::to_string(i)));
    }
    trees.push_back(BTreeNode::sequence("Root", kids));
    for (int j = 0; j < n; ++j)
    {
      auto nested = kids;
      nested[static_cast<std::size_t>(j)] = BTreeNode::sequence("Inner", {leaf("M0"), leaf("M1")});
      trees.push_back(BTreeNode::sequence("Root", nested));
    }
  }
  for (auto const &tree : trees)
  {
    for (auto const &leaves : oracle::all_assignments(tree))
    {
      auto const r = btree::tick(tree, leaves);
      EXPECT_EQ(btree::trace_to_triples(tree, r.trace), oracle::construction(tree, leaves));
    }
  }
}

TEST(BTree, ExhaustiveSmallTreesMatchOracle)
{
  auto const trees = oracle::all_trees(2, 3);
  ASSERT_GT(trees.size(), 50u);
  for (auto const &tree : trees)
  {
    for (auto const &leaves : oracle::all_assignments(tree))
    {
      auto const r = btree::tick(tree, leaves);
      ASSERT_EQ(r.status, oracle::status(tree, leaves)) << btree::tree_serialize(tree);
      std::vector<std::string> ids;
      oracle::ticked(tree, leaves, ids);
      EXPECT_EQ(trace_ids(r.trace), ids);
      EXPECT_EQ(btree::trace_to_triples(tree, r.trace), oracle::construction(tree, leaves));
    }
  }
}

TEST(BTree, FullParallelEqualsSequenceSuccess)
{
  for (auto const &tree : oracle::all_trees(1, 4))
  {
    if (tree.kind != btree::NodeKind::Sequence)
    {
      continue;
    }
    auto par = BTreeNode::parallel("C0", tree.children, tree.children.size());
    for (auto const &leaves : oracle::all_assignments(tree))
    {
      bool const seq_ok = btree::tick(tree, leaves).status == S;
      bool const par_ok = btree::tick(par, leaves).status == S;
      EXPECT_EQ(seq_ok, par_ok);
    }
  }
}

TEST(BTree, TreeTextRoundTrip)
{
  auto const single = leaf("Grasp");
  EXPECT_EQ(btree::tree_parse(btree::tree_serialize(single)), single);

  auto const pen = task::grasp_tree("pen", {geometry::ConstraintKind::p2p, geometry::ConstraintKind::par});
  auto const text = btree::tree_serialize(pen);
  EXPECT_EQ(btree::tree_parse(text), pen);
  EXPECT_CODE(btree::tree_parse(text.substr(0, text.size() / 2)), ParseError);
  EXPECT_CODE(btree::tree_parse("(sequence \"S\" (bogus \"x\"))"), ParseError);

  for (auto const &tree : oracle::all_trees(3, 4))
  {
    EXPECT_EQ(btree::tree_parse(btree::tree_serialize(tree)), tree);
  }
}

TEST(BTree, ActiveActions)
{
  auto const pen = task::grasp_tree("pen", {geometry::ConstraintKind::p2p, geometry::ConstraintKind::par});
  auto       ids = [](std::vector<BTreeNode const *> const &v) {
    std::vector<std::string> out;
    for (auto const *n : v)
    {
      out.push_back(n->id);
    }
    return out;
  };
  EXPECT_EQ(ids(btree::active_actions(pen, {})), (std::vector<std::string>{"PP", "Par"}));
  EXPECT_EQ(ids(btree::active_actions(pen, {"PP"})), (std::vector<std::string>{"Par"}));
  EXPECT_EQ(ids(btree::active_actions(pen, {"PP", "Par"})), (std::vector<std::string>{"Grasp"}));
  EXPECT_TRUE(btree::active_actions(pen, {"PP"}, {"Par"}).empty());
}

// ---------------------------------------------------------------------------
// memory

Image gradient(int w, int h, int phase)
{
  Image img(w, h);
  for (int y = 0; y < h; ++y)
  {
    for (int x = 0; x < w; ++x)
    {
      img.at(x, y) = static_cast<std::uint8_t>((x * 3 + y * (phase % 7) + phase * 37) % 256);
    }
  }
  return img;
}

ekg::Graph demo_graph(std::string const &object)
{
  auto const       tree = task::grasp_tree(object, {geometry::ConstraintKind::p2p});
  btree::TickTrace trace;
  return task::task_graph(tree, trace, object, "");
}

TEST(Memory, EmbeddingBasics)
{
  auto const img = gradient(64, 48, 3);
  auto const v   = memory::builtin_embed(img);
  ASSERT_EQ(v.size(), memory::kBuiltinDim);
  EXPECT_NEAR(memory::cosine(v, v), 1.0, 1e-12);

  Image inv = img;
  for (auto &p : inv.pixels)
  {
    p = static_cast<std::uint8_t>(255 - p);
  }
  EXPECT_NEAR(memory::cosine(v, memory::builtin_embed(inv)), -1.0, 1e-6);

  EXPECT_EQ(memory::builtin_embed(Image(30, 20, 77)), std::vector<double>(64, 0.125));
  EXPECT_CODE(memory::builtin_embed(Image()), InvalidArgument);
  EXPECT_CODE(memory::cosine({1.0}, {1.0, 2.0}), LengthMismatch);
}

TEST(Memory, RememberAndRetrieve)
{
  TempDir dir;
  memory::MemoryStore store(dir / "store");
  EXPECT_TRUE(store.empty());
  EXPECT_CODE(store.retrieve(gradient(32, 32, 1), 1), EmptyStore);

  for (int i = 0; i < 5; ++i)
  {
    store.remember(demo_graph("pen"), gradient(64, 48, i), {"grasp", "pen"}, 1000 + i);
  }
  auto const again = store.remember(demo_graph("pen"), gradient(64, 48, 2), {"grasp", "pen"}, 2000);
  EXPECT_EQ(store.size(), 6u);
  EXPECT_EQ(again.id, "demo-0006");

  for (auto const &d : store.demos())
  {
    auto const hits = store.retrieve(d.first_frame, 1);
    EXPECT_NEAR(hits[0].score, 1.0, 1e-9);
  }
  auto const top = store.retrieve(gradient(64, 48, 2), 6);
  // two identical demos tie at 1.0; the lower id wins
  EXPECT_EQ(top[0].demo->id, "demo-0003");
  EXPECT_EQ(top[1].demo->id, "demo-0006");
  for (std::size_t i = 1; i < top.size(); ++i)
  {
    EXPECT_GE(top[i - 1].score, top[i].score);
  }
  for (std::size_t k = 1; k <= 6; ++k)
  {
    auto const prefix = store.retrieve(gradient(64, 48, 9), k);
    auto const full   = store.retrieve(gradient(64, 48, 9), 6);
    for (std::size_t i = 0; i < k; ++i)
    {
      EXPECT_EQ(prefix[i].demo->id, full[i].demo->id);
    }
  }
  EXPECT_CODE(store.retrieve(gradient(64, 48, 1), 0), InvalidArgument);
  EXPECT_CODE(store.retrieve(gradient(64, 48, 1), 7), InvalidArgument);

  memory::MemoryStore reopened(dir / "store");
  ASSERT_EQ(reopened.size(), 6u);
  EXPECT_EQ(reopened.demos()[3].meta.object, "pen");
  EXPECT_EQ(reopened.demos()[3].created_ms, 1003);
  EXPECT_EQ(reopened.demos()[3].first_frame, gradient(64, 48, 3));
  EXPECT_EQ(reopened.demos()[3].load_graph().id(), "demo-0004");
}

TEST(Memory, InsertionOrderDoesNotChangeRanking)
{
  std::vector<int> phases{4, 1, 6, 3, 9, 12, 5};
  auto ranked = [](TempDir const &dir, std::vector<int> const &order) {
    memory::MemoryStore store(dir.path());
    for (int p : order)
    {
      store.remember(demo_graph("pen"), gradient(40, 40, p), {"grasp", std::to_string(p)}, 0);
    }
    std::vector<std::pair<std::string, double>> out;
    for (auto const &h : store.retrieve(gradient(40, 40, 2), order.size()))
    {
      out.emplace_back(h.demo->meta.object, h.score);
    }
    return out;
  };
  TempDir    a;
  auto const base = ranked(a, phases);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 5; ++i)
  {
    std::shuffle(phases.begin(), phases.end(), rng);
    TempDir b;
    EXPECT_EQ(ranked(b, phases), base);
  }
}

class ScaledEmbedder : public memory::Embedder
{
public:
  explicit ScaledEmbedder(std::vector<double> scales)
    : scales_(std::move(scales))
  {}
  std::vector<double> embed(Image const &image) const override
  {
    auto v = memory::builtin_embed(image);
    for (double &x : v)
    {
      x *= scales_[image.pixels[0] % scales_.size()];
    }
    return v;
  }
  std::size_t dimension() const override { return memory::kBuiltinDim; }

private:
  std::vector<double> scales_;
};

TEST(Memory, RankingInvariantToEmbeddingScale)
{
  TempDir             a, b;
  memory::MemoryStore plain(a.path());
  memory::MemoryStore scaled(b.path(), std::make_shared<ScaledEmbedder>(std::vector<double>{0.01, 3.0, 250.0}));
  for (int p = 0; p < 8; ++p)
  {
    plain.remember(demo_graph("pen"), gradient(40, 40, p), {"t", "o"}, 0);
    scaled.remember(demo_graph("pen"), gradient(40, 40, p), {"t", "o"}, 0);
  }
  auto const x = plain.retrieve(gradient(40, 40, 11), 8);
  auto const y = scaled.retrieve(gradient(40, 40, 11), 8);
  for (std::size_t i = 0; i < 8; ++i)
  {
    EXPECT_EQ(x[i].demo->id, y[i].demo->id);
    EXPECT_NEAR(x[i].score, y[i].score, 1e-12);
  }
}

TEST(Memory, PersistFailureWhenRootIsBlocked)
{
  TempDir dir;
  std::ofstream(dir / "file") << "not a directory";
  memory::MemoryStore store(dir / "file" / "store");
  EXPECT_CODE(store.remember(demo_graph("pen"), gradient(8, 8, 1), {"t", "o"}), PersistFailure);
  EXPECT_TRUE(store.empty());
}

TEST(Memory, CorruptDemoIsReported)
{
  TempDir dir;
  {
    memory::MemoryStore store(dir.path());
    store.remember(demo_graph("pen"), gradient(8, 8, 1), {"t", "o"}, 0);
  }
  std::ofstream(dir / "demo-0001" / "meta.json") << "{ nope";
  EXPECT_ANY_THROW(memory::MemoryStore{dir.path()});
}

// ---------------------------------------------------------------------------
// task graphs and experience queries

TEST(Task, GraspTreeShape)
{
  auto const tree = task::grasp_tree("pen", task::parse_stack("p2p,par"));
  ASSERT_EQ(tree.children.size(), 2u);
  auto const &move = tree.children[0];
  EXPECT_EQ(move.kind, btree::NodeKind::Parallel);
  EXPECT_EQ(move.success_threshold(), 2u);
  EXPECT_EQ(move.children[0].id, "PP");
  EXPECT_EQ(move.children[1].id, "Par");
  EXPECT_EQ(move.children[1].action.constraints[0].weight, task::kParWeight);
  EXPECT_EQ(tree.children[1].id, "Grasp");
  EXPECT_CODE(task::parse_stack("p2p,,par"), InvalidArgument);
  EXPECT_CODE(task::grasp_tree("pen", {}), InvalidArgument);
}

TEST(Task, GraphDescribesTree)
{
  auto const tree = task::grasp_tree("pen", task::parse_stack("p2p,par"));
  auto const run  = btree::tick(tree, {{"PP", S}, {"Par", S}, {"Grasp", S}});
  auto const g    = task::task_graph(tree, run.trace, "pen", "demo");
  EXPECT_TRUE(ekg::schema_violations(g).empty());
  EXPECT_TRUE(g.contains({rekgr("Move"), isDescribedAs(), rekgr("PP")}));
  EXPECT_TRUE(g.contains({rekgr("Move"), isDescribedAs(), rekgr("Par")}));
  EXPECT_TRUE(g.contains({rekgr("Move"), hasActor(), rekgr("Robot")}));
  EXPECT_TRUE(g.contains({rekgr("Task"), hasObject(), rekgr("Pen")}));
  EXPECT_TRUE(g.contains({rekgr("Pen"), sameAs(), dbr("Pen")}));
  EXPECT_TRUE(g.contains({rekgr("Task"), hasStatus(), Success()}));
  EXPECT_TRUE(g.contains({rekgr("Move"), hasConcurrentEvent(), rekgr("PP")}));
  EXPECT_TRUE(g.contains({rekgr("Move"), nextEvent(), rekgr("Grasp")}));
  EXPECT_EQ(ekg::parse(ekg::serialize(g)), g);

  auto const raw = task::task_graph(tree, run.trace, "pen", "demo", false);
  EXPECT_FALSE(raw.contains({rekgr("Pen"), sameAs(), dbr("Pen")}));
}

TEST(Task, QueryTaskFromPenDemo)
{
  auto const tree = task::grasp_tree("pen", task::parse_stack("p2p,par"));
  auto const g    = task::task_graph(tree, btree::tick(tree, {{"PP", S}, {"Par", S}, {"Grasp", S}}).trace, "pen", "d1");
  auto const exp  = task::query_task(std::vector<ekg::Graph>{g});
  EXPECT_EQ(exp.tree, tree);
  EXPECT_EQ(exp.prompt, "pen");
  EXPECT_EQ(exp.graph_id, "d1");
}

TEST(Task, QueryTaskFallsBackAndFails)
{
  auto const tree = task::grasp_tree("red pepper", task::parse_stack("p2p"));
  auto const good = task::task_graph(tree, {}, "red pepper", "good");
  auto       bare = moving_graph();
  bare.set_id("bare");
  ekg::Graph broken("broken");
  broken.insert(rekgr("Task"), hasBehaviorTree(), Term::literal("(sequence"));
  broken.insert(rekgr("Task"), hasObject(), rekgr("Pen"));

  auto const exp = task::query_task(std::vector<ekg::Graph>{bare, broken, good});
  EXPECT_EQ(exp.graph_id, "good");
  EXPECT_EQ(exp.prompt, "red pepper");
  EXPECT_CODE(task::query_task(std::vector<ekg::Graph>{bare, broken}), NoUsableExperience);
  EXPECT_CODE(task::query_task(std::vector<ekg::Graph>{}), NoUsableExperience);
}

}  // namespace
