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
#include <cstddef>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "kgservo/error.hpp"

namespace kgservo::eval {

namespace detail {

inline void check_pair(std::vector<double> const &s, std::vector<double> const &t)
{
  if (s.size() != t.size())
  {
    throw Error(ErrorCode::LengthMismatch,
                "series lengths " + std::to_string(s.size()) + " and " + std::to_string(t.size()));
  }
  if (s.size() < 2)
  {
    throw Error(ErrorCode::InvalidArgument, "correlation needs at least two samples");
  }
}

inline double mean(std::vector<double> const &v)
{
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace detail

/// Pearson linear correlation coefficient.
inline double lcc(std::vector<double> const &s, std::vector<double> const &s_hat)
{
  detail::check_pair(s, s_hat);
  double const ms = detail::mean(s);
  double const mt = detail::mean(s_hat);
  double       sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
  {
    double const a = s[i] - ms;
    double const b = s_hat[i] - mt;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx <= 0.0 || syy <= 0.0)
  {
    throw Error(ErrorCode::ZeroVariance, "constant series");
  }
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

/// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> ranks(std::vector<double> const &v)
{
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();)
  {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]])
    {
      ++j;
    }
    double const avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k)
    {
      r[order[k]] = avg;
    }
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation 1 - 6 sum d^2 / (m (m^2 - 1)) over average
/// ranks. `literal` drops the square on d, which makes the sum vanish.
inline double srocc(std::vector<double> const &s, std::vector<double> const &s_hat, bool literal = false)
{
  detail::check_pair(s, s_hat);
  auto const first  = std::minmax_element(s.begin(), s.end());
  auto const second = std::minmax_element(s_hat.begin(), s_hat.end());
  if (*first.first == *first.second || *second.first == *second.second)
  {
    throw Error(ErrorCode::ZeroVariance, "constant series");
  }
  auto const   v  = ranks(s);
  auto const   vh = ranks(s_hat);
  double       sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
  {
    double const d = v[i] - vh[i];
    sum += literal ? d : d * d;
  }
  double const m = static_cast<double>(s.size());
  return 1.0 - 6.0 * sum / (m * (m * m - 1.0));
}

/// Per-frame scalar scores of one video for one method.
struct ScoreSeries
{
  std::string         video_id;
  std::string         method;
  std::vector<double> scores;
  bool                failed = false;  // features lost during the video
};

struct VideoScore
{
  std::string video_id;
  double      lcc      = 0.0;
  double      srocc    = 0.0;
  bool        failed   = false;
  bool        excluded = false;  // zero-variance series, left out of the means
};

struct DatasetScore
{
  double                   mlcc   = 0.0;
  double                   msrocc = 0.0;
  std::vector<VideoScore>  rows;
  std::vector<std::string> warnings;
  std::size_t              used = 0;
};

/// Mean LCC and SROCC over parallel lists of ground-truth and predicted
/// series. A failed prediction scores (-1, -1); zero-variance videos are
/// excluded with a warning.
inline DatasetScore evaluate_dataset(std::vector<ScoreSeries> const &gt, std::vector<ScoreSeries> const &pred,
                                     bool srocc_literal = false)
{
  if (gt.size() != pred.size())
  {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(gt.size()) + " ground-truth videos vs " + std::to_string(pred.size()) + " predicted");
  }
  DatasetScore out;
  double       sum_l = 0.0, sum_s = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i)
  {
    VideoScore row;
    row.video_id = gt[i].video_id;
    if (gt[i].failed)
    {
      throw Error(ErrorCode::InvalidArgument, "ground truth of video '" + gt[i].video_id + "' is marked failed");
    }
    if (pred[i].failed)
    {
      row.failed = true;
      row.lcc    = -1.0;
      row.srocc  = -1.0;
    }
    else
    {
      if (gt[i].scores.size() != pred[i].scores.size())
      {
        throw Error(ErrorCode::LengthMismatch, "video '" + gt[i].video_id + "': " +
                                                   std::to_string(gt[i].scores.size()) + " vs " +
                                                   std::to_string(pred[i].scores.size()) + " frames");
      }
      try
      {
        row.lcc   = lcc(gt[i].scores, pred[i].scores);
        row.srocc = srocc(gt[i].scores, pred[i].scores, srocc_literal);
      }
      catch (Error const &e)
      {
        if (e.code() != ErrorCode::ZeroVariance)
        {
          throw;
        }
        row.excluded = true;
        out.warnings.push_back("video '" + row.video_id + "' excluded: zero variance");
      }
    }
    if (!row.excluded)
    {
      sum_l += row.lcc;
      sum_s += row.srocc;
      ++out.used;
    }
    out.rows.push_back(row);
  }
  if (out.used == 0)
  {
    throw Error(ErrorCode::ZeroVariance, "no video has a usable series");
  }
  out.mlcc   = sum_l / static_cast<double>(out.used);
  out.msrocc = sum_s / static_cast<double>(out.used);
  return out;
}

struct ReportRow
{
  std::string name;
  double      mlcc   = 0.0;
  double      msrocc = 0.0;
};

inline std::string format_table(std::vector<ReportRow> const &rows)
{
  std::size_t width = 4;
  for (auto const &r : rows)
  {
    width = std::max(width, r.name.size());
  }
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "Name" << "  " << std::right << std::setw(7) << "mLCC"
      << "  " << std::setw(7) << "mSROCC" << "\n";
  out << std::string(width + 18, '-') << "\n";
  out << std::fixed << std::setprecision(3);
  for (auto const &r : rows)
  {
    out << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::right << std::setw(7) << r.mlcc
        << "  " << std::setw(7) << r.msrocc << "\n";
  }
  return out.str();
}

inline std::string format_csv(std::vector<ReportRow> const &rows)
{
  std::ostringstream out;
  out << "method,mLCC,mSROCC\n" << std::setprecision(6) << std::fixed;
  for (auto const &r : rows)
  {
    out << r.name << "," << r.mlcc << "," << r.msrocc << "\n";
  }
  return out.str();
}

}  // namespace kgservo::eval
