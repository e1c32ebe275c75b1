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

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <regex>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "kgservo/ekg.hpp"
#include "kgservo/error.hpp"
#include "kgservo/image.hpp"

namespace kgservo::memory {

namespace fs = std::filesystem;

/// Image to fixed-dimension vector. Retrieval normalizes the output, so an
/// embedder need not return unit vectors.
class Embedder
{
public:
  virtual ~Embedder()                                     = default;
  virtual std::vector<double> embed(Image const &image) const = 0;
  virtual std::size_t         dimension() const               = 0;
};

inline constexpr std::size_t kBuiltinDim = 64;

/// 8x8 block means of the intensities, mean-subtracted and L2-normalized.
/// Constant images map to the uniform vector (1/8, ..., 1/8).
inline std::vector<double> builtin_embed(Image const &image)
{
  if (image.empty() || image.width <= 0 || image.height <= 0)
  {
    throw Error(ErrorCode::InvalidArgument, "cannot embed an empty image");
  }
  std::vector<double> v(kBuiltinDim, 0.0);
  auto const          span = [](int i, int n) {
    int const lo = i * n / 8;
    int const hi = std::max(lo + 1, (i + 1) * n / 8);
    return std::pair{std::min(lo, n - 1), std::min(hi, n)};
  };
  for (int by = 0; by < 8; ++by)
  {
    auto const [y0, y1] = span(by, image.height);
    for (int bx = 0; bx < 8; ++bx)
    {
      auto const [x0, x1] = span(bx, image.width);
      double     sum      = 0.0;
      for (int y = y0; y < y1; ++y)
      {
        for (int x = x0; x < x1; ++x)
        {
          sum += image.at(x, y);
        }
      }
      v[static_cast<std::size_t>(by * 8 + bx)] = sum / static_cast<double>((x1 - x0) * (y1 - y0));
    }
  }
  double mean = 0.0;
  for (double x : v)
  {
    mean += x;
  }
  mean /= static_cast<double>(kBuiltinDim);
  double norm = 0.0;
  for (double &x : v)
  {
    x -= mean;
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm < 1e-9)
  {
    return std::vector<double>(kBuiltinDim, 1.0 / 8.0);
  }
  for (double &x : v)
  {
    x /= norm;
  }
  return v;
}

class BuiltinEmbedder : public Embedder
{
public:
  std::vector<double> embed(Image const &image) const override { return builtin_embed(image); }
  std::size_t         dimension() const override { return kBuiltinDim; }
};

/// Cosine similarity; zero vectors score 0.
inline double cosine(std::vector<double> const &a, std::vector<double> const &b)
{
  if (a.size() != b.size())
  {
    throw Error(ErrorCode::LengthMismatch, "embedding dimensions differ");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
  {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0)
  {
    return 0.0;
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct DemoMeta
{
  std::string task;
  std::string object;
};

struct Demonstration
{
  std::string  id;
  fs::path     dir;
  Image        first_frame;
  DemoMeta     meta;
  int          frame_w    = 0;
  int          frame_h    = 0;
  std::int64_t created_ms = 0;

  fs::path graph_path() const { return dir / "graph.ekg"; }

  ekg::Graph load_graph() const
  {
    std::ifstream in(graph_path(), std::ios::binary);
    if (!in)
    {
      throw Error(ErrorCode::IoError, "cannot read " + graph_path().string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ekg::parse(ss.str());
  }
};

struct Retrieved
{
  Demonstration const *demo  = nullptr;
  double               score = 0.0;
};

namespace detail {

/// Exclusive advisory lock on a file, released on destruction.
class FileLock
{
public:
  explicit FileLock(fs::path const &path)
  {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0)
    {
      if (fd_ >= 0)
      {
        ::close(fd_);
      }
      throw Error(ErrorCode::PersistFailure, "cannot lock " + path.string());
    }
  }
  FileLock(FileLock const &)            = delete;
  FileLock &operator=(FileLock const &) = delete;
  ~FileLock()
  {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }

private:
  int fd_ = -1;
};

inline std::string read_file(fs::path const &p)
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

inline void write_file(fs::path const &p, std::string const &bytes)
{
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out)
  {
    throw Error(ErrorCode::PersistFailure, "cannot write " + p.string());
  }
}

inline std::regex const &id_pattern()
{
  static std::regex const re("demo-([0-9]{4,})");
  return re;
}

}  // namespace detail

/// Directory of demonstrations, one `{id}/frame.pgm, graph.ekg, meta.json`
/// triple per entry. Readers may run concurrently; remember() holds an
/// exclusive lock on `{root}/.lock`.
class MemoryStore
{
public:
  explicit MemoryStore(fs::path root, std::shared_ptr<Embedder const> embedder = nullptr)
    : root_(std::move(root))
    , embedder_(embedder ? std::move(embedder) : std::make_shared<BuiltinEmbedder>())
  {
    reload();
  }

  fs::path const                   &root() const noexcept { return root_; }
  std::vector<Demonstration> const &demos() const noexcept { return demos_; }
  std::size_t                       size() const noexcept { return demos_.size(); }
  bool                              empty() const noexcept { return demos_.empty(); }

  /// Rescans the directory. A missing root is an empty store.
  void reload()
  {
    demos_.clear();
    embeddings_.clear();
    std::error_code ec;
    if (!fs::exists(root_, ec))
    {
      return;
    }
    if (!fs::is_directory(root_, ec))
    {
      throw Error(ErrorCode::IoError, root_.string() + " is not a directory");
    }
    std::vector<fs::path> dirs;
    for (auto const &entry : fs::directory_iterator(root_))
    {
      if (entry.is_directory() && std::regex_match(entry.path().filename().string(), detail::id_pattern()))
      {
        dirs.push_back(entry.path());
      }
    }
    std::sort(dirs.begin(), dirs.end());
    for (auto const &d : dirs)
    {
      demos_.push_back(load_demo(d));
      embeddings_.push_back(embedder_->embed(demos_.back().first_frame));
    }
  }

  /// Persists a new demonstration under a fresh id.
  Demonstration const &remember(ekg::Graph const &graph, Image const &first_frame, DemoMeta const &meta,
                                std::int64_t created_ms = now_ms())
  {
    for (auto const &t : graph)
    {
      ekg::validate(t);
    }
    if (first_frame.empty())
    {
      throw Error(ErrorCode::InvalidArgument, "first frame is empty");
    }
    Demonstration demo;
    try
    {
      std::error_code ec;
      fs::create_directories(root_, ec);
      if (ec || !fs::is_directory(root_))
      {
        throw Error(ErrorCode::PersistFailure, "cannot create store " + root_.string());
      }
      detail::FileLock lock(root_ / ".lock");
      demo.id         = next_id();
      demo.dir        = root_ / demo.id;
      demo.first_frame = first_frame;
      demo.meta       = meta;
      demo.frame_w    = first_frame.width;
      demo.frame_h    = first_frame.height;
      demo.created_ms = created_ms;

      fs::path const tmp = root_ / (".tmp-" + demo.id);
      fs::remove_all(tmp, ec);
      if (!fs::create_directory(tmp, ec) || ec)
      {
        throw Error(ErrorCode::PersistFailure, "cannot create " + tmp.string());
      }
      ekg::Graph named = graph;
      if (named.id().empty())
      {
        named.set_id(demo.id);
      }
      detail::write_file(tmp / "frame.pgm", pnm::encode_pgm(first_frame));
      detail::write_file(tmp / "graph.ekg", ekg::serialize(named));
      nlohmann::json const j{{"id", demo.id},           {"task", meta.task},         {"object", meta.object},
                             {"frame_w", demo.frame_w}, {"frame_h", demo.frame_h}, {"created_ms", created_ms}};
      detail::write_file(tmp / "meta.json", j.dump(2) + "\n");
      fs::rename(tmp, demo.dir, ec);
      if (ec)
      {
        throw Error(ErrorCode::PersistFailure, "cannot publish " + demo.dir.string() + ": " + ec.message());
      }
    }
    catch (fs::filesystem_error const &e)
    {
      throw Error(ErrorCode::PersistFailure, e.what());
    }
    embeddings_.push_back(embedder_->embed(demo.first_frame));
    demos_.push_back(std::move(demo));
    return demos_.back();
  }

  /// Top-k demonstrations by cosine similarity of first-frame embeddings,
  /// descending; equal scores are ordered by id.
  std::vector<Retrieved> retrieve(Image const &query, std::size_t k) const
  {
    if (demos_.empty())
    {
      throw Error(ErrorCode::EmptyStore, root_.string());
    }
    if (k == 0 || k > demos_.size())
    {
      throw Error(ErrorCode::InvalidArgument,
                  "k must be in [1, " + std::to_string(demos_.size()) + "], got " + std::to_string(k));
    }
    auto const             z = embedder_->embed(query);
    std::vector<Retrieved> all;
    all.reserve(demos_.size());
    for (std::size_t i = 0; i < demos_.size(); ++i)
    {
      all.push_back({&demos_[i], cosine(z, embeddings_[i])});
    }
    std::sort(all.begin(), all.end(), [](Retrieved const &a, Retrieved const &b) {
      if (a.score != b.score)
      {
        return a.score > b.score;
      }
      return a.demo->id < b.demo->id;
    });
    all.resize(k);
    return all;
  }

  static std::int64_t now_ms()
  {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  }

private:
  std::string next_id() const
  {
    long max_n = 0;
    for (auto const &entry : fs::directory_iterator(root_))
    {
      std::smatch m;
      auto const  name = entry.path().filename().string();
      if (std::regex_match(name, m, detail::id_pattern()))
      {
        max_n = std::max(max_n, std::stol(m[1].str()));
      }
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "demo-%04ld", max_n + 1);
    return buf;
  }

  static Demonstration load_demo(fs::path const &dir)
  {
    Demonstration demo;
    demo.dir = dir;
    try
    {
      auto const j    = nlohmann::json::parse(detail::read_file(dir / "meta.json"));
      demo.id         = j.at("id").get<std::string>();
      demo.meta.task  = j.at("task").get<std::string>();
      demo.meta.object = j.at("object").get<std::string>();
      demo.frame_w    = j.at("frame_w").get<int>();
      demo.frame_h    = j.at("frame_h").get<int>();
      demo.created_ms = j.at("created_ms").get<std::int64_t>();
    }
    catch (nlohmann::json::exception const &e)
    {
      throw Error(ErrorCode::IoError, (dir / "meta.json").string() + ": " + e.what());
    }
    demo.first_frame = pnm::load_pnm(dir / "frame.pgm");
    if (demo.first_frame.width != demo.frame_w || demo.first_frame.height != demo.frame_h)
    {
      throw Error(ErrorCode::IoError, dir.string() + ": frame size disagrees with meta.json");
    }
    if (!fs::exists(demo.graph_path()))
    {
      throw Error(ErrorCode::IoError, demo.graph_path().string() + " is missing");
    }
    return demo;
  }

  fs::path                         root_;
  std::shared_ptr<Embedder const>  embedder_;
  std::vector<Demonstration>       demos_;
  std::vector<std::vector<double>> embeddings_;
};

}  // namespace kgservo::memory
