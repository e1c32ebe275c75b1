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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "kgservo/btree.hpp"
#include "kgservo/dataset.hpp"
#include "kgservo/ekg.hpp"
#include "kgservo/error.hpp"
#include "kgservo/eval.hpp"
#include "kgservo/memory.hpp"
#include "kgservo/segbridge.hpp"
#include "kgservo/servo.hpp"
#include "kgservo/sim.hpp"
#include "kgservo/task.hpp"

namespace fs = std::filesystem;
using namespace kgservo;

namespace {

enum Exit : int
{
  kOk      = 0,
  kUsage   = 1,
  kMemory  = 2,
  kControl = 3,
  kParse   = 4,
};

int exit_code(ErrorCode code)
{
  switch (code)
  {
  case ErrorCode::NoUsableExperience:
  case ErrorCode::EmptyStore:
  case ErrorCode::PersistFailure: return kMemory;
  case ErrorCode::ParseError:
  case ErrorCode::SchemaViolation:
  case ErrorCode::DatasetFormat: return kParse;
  case ErrorCode::FeatureLost:
  case ErrorCode::SingularBootstrap:
  case ErrorCode::NumericalFailure:
  case ErrorCode::OutOfView:
  case ErrorCode::EmptyMask:
  case ErrorCode::InsufficientSupport:
  case ErrorCode::DegenerateSpread:
  case ErrorCode::SidecarError: return kControl;
  default: return kUsage;
  }
}

void report_error(ErrorCode code, std::string const &detail)
{
  nlohmann::json const j{{"error", std::string(to_string(code))}, {"detail", detail}};
  std::cerr << j.dump() << "\n";
}

std::string read_file(fs::path const &p)
{
  std::ifstream in(p, std::ios::binary);
  if (!in)
  {
    throw Error(ErrorCode::IoError, "cannot read " + p.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(fs::path const &p, std::string const &text)
{
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out)
  {
    throw Error(ErrorCode::IoError, "cannot write " + p.string());
  }
}

nlohmann::json read_json(fs::path const &p)
{
  try
  {
    return nlohmann::json::parse(read_file(p));
  }
  catch (nlohmann::json::parse_error const &e)
  {
    throw Error(ErrorCode::ParseError, p.string() + ": " + e.what());
  }
}

ekg::Graph load_graph(fs::path const &p)
{
  try
  {
    return ekg::parse(read_file(p));
  }
  catch (Error const &e)
  {
    if (e.code() == ErrorCode::ParseError)
    {
      throw Error(ErrorCode::ParseError, p.string() + ": " + e.detail());
    }
    throw;
  }
}

std::string default_store()
{
  char const *env = std::getenv("SERVO_EKG_STORE");
  return env ? env : "";
}

/// Task settings read from the optional "robot" and "task" blocks of a scene file.
struct SceneTask
{
  servo::Vector home_q = servo::Vector::Zero(4);
  std::string   object;
  std::string   label = "grasp";
  std::string   stack = "p2p,par";
};

SceneTask scene_task(nlohmann::json const &j, sim::Scene const &scene)
{
  SceneTask t;
  try
  {
    if (j.contains("robot") && j["robot"].contains("home_q"))
    {
      auto const q = j["robot"]["home_q"].get<std::vector<double>>();
      if (q.size() != 4)
      {
        throw Error(ErrorCode::ParseError, "robot.home_q needs 4 joint values");
      }
      t.home_q = Eigen::Map<servo::Vector const>(q.data(), 4);
    }
    if (j.contains("task"))
    {
      t.object = j["task"].value("object", t.object);
      t.label  = j["task"].value("label", t.label);
      t.stack  = j["task"].value("stack", t.stack);
    }
  }
  catch (nlohmann::json::exception const &e)
  {
    throw Error(ErrorCode::ParseError, std::string("scene: ") + e.what());
  }
  if (t.object.empty() && !scene.objects.empty())
  {
    t.object = scene.objects.front().name;
  }
  return t;
}

// ---------------------------------------------------------------------------

struct GenerateArgs
{
  std::string   scene;
  std::string   out;
  std::uint64_t seed   = 1;
  std::size_t   videos = 19;
  int           frames = 24;
  int           stride = 1;
};

int cmd_generate(GenerateArgs const &a)
{
  auto const                scene = sim::scene_from_json(read_json(a.scene));
  dataset::GenerateConfig   cfg;
  cfg.seed     = a.seed;
  cfg.n_videos = a.videos;
  cfg.frames   = a.frames;
  cfg.stride   = a.stride;
  auto const records = dataset::generate(scene, a.out, cfg);
  for (auto const &r : records)
  {
    std::cout << r.id << "\t" << r.object << "\t" << r.frames << " frames\n";
  }
  return kOk;
}

struct ServoArgs
{
  std::string   scene;
  std::string   out = "trial";
  std::string   stack;
  std::string   tree;
  std::string   object;
  bool          from_memory = false;
  std::string   store       = default_store();
  std::size_t   k           = 3;
  std::uint64_t seed        = 0;
  std::string   segmenter   = "sim";
  bool          remember    = false;
  bool          paced       = false;
  double        lambda      = 0.05;
  double        gain        = 0.1;
  int           max_iters   = 300;
  bool          literal_broyden = false;
};

int cmd_servo(ServoArgs const &a)
{
  auto const scene_json = read_json(a.scene);
  auto const scene      = sim::scene_from_json(scene_json);
  auto       st         = scene_task(scene_json, scene);
  auto const chain      = sim::KinematicChain::default_arm();

  servo::Vector q0 = st.home_q;
  if (a.seed != 0)
  {
    auto rng = make_rng(a.seed, 0x51A27);
    for (Eigen::Index i = 0; i < q0.size(); ++i)
    {
      q0[i] += uniform(rng, -0.05, 0.05);
    }
  }
  Image const first_frame = sim::render_frame(sim::forward_kinematics(chain, q0), scene);

  btree::BTreeNode tree;
  std::string      prompt = a.object.empty() ? st.object : a.object;
  if (a.from_memory)
  {
    if (a.store.empty())
    {
      throw Error(ErrorCode::NoUsableExperience, "no store given (--store or SERVO_EKG_STORE)");
    }
    memory::MemoryStore store(a.store);
    if (store.empty())
    {
      throw Error(ErrorCode::NoUsableExperience, "memory store " + a.store + " is empty");
    }
    auto const                      hits = store.retrieve(first_frame, std::min(a.k, store.size()));
    std::vector<ekg::Graph>         graphs;
    for (auto const &h : hits)
    {
      graphs.push_back(h.demo->load_graph());
      std::cerr << "retrieved " << h.demo->id << " score " << h.score << "\n";
    }
    auto exp = task::query_task(graphs);
    tree     = std::move(exp.tree);
    prompt   = exp.prompt;
    std::cerr << "experience " << exp.graph_id << ": prompt '" << prompt << "'\n";
  }
  else if (!a.tree.empty())
  {
    tree = btree::tree_parse(read_file(a.tree));
  }
  else
  {
    tree = task::grasp_tree(prompt, task::parse_stack(a.stack.empty() ? st.stack : a.stack),
                            task::GraspGoals::for_camera(scene.camera));
  }

  std::unique_ptr<sim::MaskSource>           source;
  std::unique_ptr<segbridge::SidecarClient> client;
  if (a.segmenter == "sim")
  {
    source = std::make_unique<sim::SimMaskSource>(scene);
  }
  else if (a.segmenter.rfind("sidecar:", 0) == 0)
  {
    client = std::make_unique<segbridge::SidecarClient>(a.segmenter.substr(8));
    source = std::make_unique<segbridge::SidecarMaskSource>(scene, *client);
  }
  else
  {
    throw Error(ErrorCode::InvalidArgument, "--segmenter must be 'sim' or 'sidecar:URL'");
  }

  task::TrialConfig cfg;
  cfg.servo.broyden_lambda = a.lambda;
  cfg.servo.gain           = a.gain;
  cfg.servo.max_iters      = a.max_iters;
  cfg.servo.numerator      = a.literal_broyden ? servo::BroydenNumerator::E : servo::BroydenNumerator::DeltaE;
  cfg.object               = prompt;
  cfg.graph_id             = st.label;
  cfg.paced                = a.paced;
  auto const outcome       = task::run_trial(chain, scene.camera, *source, tree, q0, cfg);

  fs::create_directories(a.out);
  for (auto const &g : outcome.groups)
  {
    std::string name;
    for (auto const &id : g.node_ids)
    {
      name += (name.empty() ? "" : "+") + id;
    }
    write_file(fs::path(a.out) / ("trajectory_" + name + ".csv"), servo::trajectory_csv(g.result.log));
  }
  write_file(fs::path(a.out) / "graph.ekg", ekg::serialize(outcome.graph));
  pnm::save_pgm(fs::path(a.out) / "first_frame.pgm", first_frame);
  auto const verdict = task::verdict_json(outcome);
  write_file(fs::path(a.out) / "verdict.json", verdict.dump(2) + "\n");
  std::cout << verdict.dump() << "\n";

  if (!outcome.succeeded())
  {
    report_error(outcome.failure, outcome.reason);
    return kControl;
  }
  if (a.remember)
  {
    if (a.store.empty())
    {
      throw Error(ErrorCode::PersistFailure, "no store given (--store or SERVO_EKG_STORE)");
    }
    memory::MemoryStore store(a.store);
    auto const         &demo = store.remember(outcome.graph, first_frame, {st.label, prompt});
    std::cerr << "remembered " << demo.id << "\n";
  }
  return kOk;
}

struct EvalArgs
{
  std::string dataset;
  std::string out;
  bool        literal = false;
  int         stride  = 1;
};

int cmd_eval(EvalArgs const &a)
{
  auto const report = dataset::run_baselines(a.dataset, a.literal, a.stride);
  auto const table  = eval::format_table(report.rows);
  auto const csv    = eval::format_csv(report.rows);
  for (auto const &w : report.warnings)
  {
    std::cerr << "warning: " << w << "\n";
  }
  std::cout << table;
  fs::path const out = a.out.empty() ? fs::path(a.dataset) : fs::path(a.out);
  fs::create_directories(out);
  write_file(out / "report.txt", table);
  write_file(out / "report.csv", csv);
  return kOk;
}

struct KgArgs
{
  std::vector<std::string> files;
  std::string              pattern;
  std::string              out;
};

ekg::Graph union_of(std::vector<std::string> const &files)
{
  ekg::Graph g;
  for (auto const &f : files)
  {
    g.merge(load_graph(f));
  }
  return g;
}

int cmd_kg_query(KgArgs const &a)
{
  auto const              pattern = ekg::parse_pattern(a.pattern);
  std::vector<ekg::Graph> graphs;
  for (auto const &f : a.files)
  {
    graphs.push_back(load_graph(f));
  }
  std::vector<ekg::Graph const *> ptrs;
  for (auto const &g : graphs)
  {
    ptrs.push_back(&g);
  }
  auto const result = ekg::query(std::span<ekg::Graph const *const>(ptrs), pattern);
  for (auto const &row : result.rows)
  {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i)
    {
      line += (i ? "\t?" : "?") + result.variables[i] + "=" + row[i].to_string();
    }
    std::cout << line << "\n";
  }
  return kOk;
}

int cmd_kg_show(KgArgs const &a)
{
  std::cout << ekg::serialize(union_of(a.files));
  return kOk;
}

/// Adds sameAs/category links for every object instance of the graph.
int cmd_kg_canonicalize(KgArgs const &a)
{
  ekg::Graph g = union_of(a.files);
  if (a.files.size() == 1)
  {
    g.set_id(load_graph(a.files.front()).id());
  }
  std::set<ekg::Triple> extra;
  for (auto const &t : g)
  {
    if (t.predicate == ekg::vocab::instanceOf() && t.object == ekg::vocab::Object())
    {
      auto const c = ekg::canonicalize(t.subject);
      if (c.empty())
      {
        std::cerr << "unlinked: " << t.subject.to_string() << "\n";
      }
      extra.insert(c.begin(), c.end());
    }
  }
  g.insert_all(extra);
  auto const text = ekg::serialize(g);
  if (a.out.empty())
  {
    std::cout << text;
  }
  else
  {
    write_file(a.out, text);
  }
  return kOk;
}

struct MemoryArgs
{
  std::string store = default_store();
  std::string graph;
  std::string frame;
  std::string task;
  std::string object;
  std::size_t k = 3;
};

memory::MemoryStore open_store(MemoryArgs const &a)
{
  if (a.store.empty())
  {
    throw Error(ErrorCode::EmptyStore, "no store given (--store or SERVO_EKG_STORE)");
  }
  return memory::MemoryStore(a.store);
}

int cmd_memory_add(MemoryArgs const &a)
{
  auto        store = open_store(a);
  auto const  graph = load_graph(a.graph);
  auto const  frame = pnm::load_pnm(a.frame);
  auto const &demo  = store.remember(graph, frame, {a.task, a.object});
  std::cout << demo.id << "\n";
  return kOk;
}

int cmd_memory_list(MemoryArgs const &a)
{
  auto const store = open_store(a);
  for (auto const &d : store.demos())
  {
    std::cout << d.id << "\t" << d.meta.task << "\t" << d.meta.object << "\t" << d.frame_w << "x" << d.frame_h << "\n";
  }
  return kOk;
}

int cmd_memory_retrieve(MemoryArgs const &a)
{
  auto const store = open_store(a);
  auto const hits  = store.retrieve(pnm::load_pnm(a.frame), std::min(a.k, std::max<std::size_t>(store.size(), 1)));
  for (auto const &h : hits)
  {
    std::cout << h.demo->id << "\t" << ekg::detail::format_double(h.score) << "\t" << h.demo->meta.object << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Knowledge-guided uncalibrated visual servoing toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto        *generate = app.add_subcommand("generate", "Render a simulated evaluation dataset");
  generate->add_option("--scene", gen.scene, "Scene JSON file")->required();
  generate->add_option("--out", gen.out, "Output dataset directory")->required();
  generate->add_option("--seed", gen.seed, "Root seed");
  generate->add_option("--videos", gen.videos, "Number of videos")->check(CLI::PositiveNumber);
  generate->add_option("--frames", gen.frames, "Rendered frames per video")->check(CLI::Range(2, 100000));
  generate->add_option("--stride", gen.stride, "Keep every n-th frame")->check(CLI::PositiveNumber);

  ServoArgs sv;
  auto     *servo_cmd = app.add_subcommand("servo", "Run a servo trial in the simulator");
  servo_cmd->add_option("--scene", sv.scene, "Scene JSON file")->required();
  servo_cmd->add_option("--out", sv.out, "Output directory");
  auto *stack_opt = servo_cmd->add_option("--stack", sv.stack, "Constraint stack, e.g. p2p,par");
  auto *tree_opt  = servo_cmd->add_option("--tree", sv.tree, "Behavior tree text file");
  auto *mem_opt   = servo_cmd->add_flag("--from-memory", sv.from_memory, "Retrieve the task from memory");
  stack_opt->excludes(tree_opt)->excludes(mem_opt);
  tree_opt->excludes(mem_opt);
  servo_cmd->add_option("--object", sv.object, "Object prompt (defaults to the scene task)");
  servo_cmd->add_option("--store", sv.store, "Memory store directory");
  servo_cmd->add_option("--k", sv.k, "Number of experiences to retrieve")->check(CLI::PositiveNumber);
  servo_cmd->add_option("--seed", sv.seed, "Start perturbation seed (0 = home pose)");
  servo_cmd->add_option("--segmenter", sv.segmenter, "sim or sidecar:URL");
  servo_cmd->add_option("--lambda", sv.lambda, "Broyden step");
  servo_cmd->add_option("--gain", sv.gain, "Control gain");
  servo_cmd->add_option("--max-iters", sv.max_iters, "Iteration budget per servo run");
  servo_cmd->add_flag("--broyden-literal", sv.literal_broyden, "Use e instead of the error change in the update");
  servo_cmd->add_flag("--remember", sv.remember, "Store the run in memory on success");
  servo_cmd->add_flag("--paced", sv.paced, "Wait one control period per move");

  EvalArgs ev;
  auto    *eval_cmd = app.add_subcommand("eval", "Score baselines on a generated dataset");
  eval_cmd->add_option("dataset", ev.dataset, "Dataset directory")->required();
  eval_cmd->add_option("--out", ev.out, "Report directory (defaults to the dataset)");
  eval_cmd->add_flag("--srocc-literal", ev.literal, "Use the unsquared rank-difference formula");
  eval_cmd->add_option("--stride", ev.stride, "Use every n-th frame")->check(CLI::PositiveNumber);

  KgArgs kg;
  auto  *kg_cmd = app.add_subcommand("kg", "Inspect event knowledge graphs");
  kg_cmd->require_subcommand(1);
  auto *kg_query = kg_cmd->add_subcommand("query", "Run a basic graph pattern");
  kg_query->add_option("--pattern", kg.pattern, "Pattern text")->required();
  kg_query->add_option("files", kg.files, "Graph files")->required();
  auto *kg_show = kg_cmd->add_subcommand("show", "Print the union of graphs");
  kg_show->add_option("files", kg.files, "Graph files")->required();
  auto *kg_canon = kg_cmd->add_subcommand("canonicalize", "Link objects to canonical entities");
  kg_canon->add_option("files", kg.files, "Graph files")->required();
  kg_canon->add_option("--out", kg.out, "Output graph file (stdout if omitted)");

  MemoryArgs mem;
  auto      *mem_cmd = app.add_subcommand("memory", "Manage the demonstration store");
  mem_cmd->require_subcommand(1);
  auto *mem_add = mem_cmd->add_subcommand("add", "Store a demonstration");
  mem_add->add_option("--store", mem.store, "Store directory");
  mem_add->add_option("--graph", mem.graph, "Graph file")->required();
  mem_add->add_option("--frame", mem.frame, "First frame (PGM/PPM)")->required();
  mem_add->add_option("--task", mem.task, "Task label")->required();
  mem_add->add_option("--object", mem.object, "Object label")->required();
  auto *mem_list = mem_cmd->add_subcommand("list", "List stored demonstrations");
  mem_list->add_option("--store", mem.store, "Store directory");
  auto *mem_retrieve = mem_cmd->add_subcommand("retrieve", "Rank demonstrations by first-frame similarity");
  mem_retrieve->add_option("--store", mem.store, "Store directory");
  mem_retrieve->add_option("--frame", mem.frame, "Query frame (PGM/PPM)")->required();
  mem_retrieve->add_option("--k", mem.k, "Number of results")->check(CLI::PositiveNumber);

  try
  {
    app.parse(argc, argv);
  }
  catch (CLI::ParseError const &e)
  {
    int const rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try
  {
    if (*generate)
    {
      return cmd_generate(gen);
    }
    if (*servo_cmd)
    {
      return cmd_servo(sv);
    }
    if (*eval_cmd)
    {
      return cmd_eval(ev);
    }
    if (*kg_query)
    {
      return cmd_kg_query(kg);
    }
    if (*kg_show)
    {
      return cmd_kg_show(kg);
    }
    if (*kg_canon)
    {
      return cmd_kg_canonicalize(kg);
    }
    if (*mem_add)
    {
      return cmd_memory_add(mem);
    }
    if (*mem_list)
    {
      return cmd_memory_list(mem);
    }
    if (*mem_retrieve)
    {
      return cmd_memory_retrieve(mem);
    }
  }
  catch (Error const &e)
  {
    report_error(e.code(), e.detail());
    return exit_code(e.code());
  }
  catch (fs::filesystem_error const &e)
  {
    report_error(ErrorCode::IoError, e.what());
    return kUsage;
  }
  return kUsage;
}
