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

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "kgservo/error.hpp"
#include "kgservo/geometry.hpp"

namespace kgservo::servo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Which residual feeds the Broyden numerator: the measured error change
/// (classical secant form) or the error itself (literal reading).
enum class BroydenNumerator
{
  DeltaE,
  E,
};

struct ServoConfig
{
  double           broyden_lambda = 0.05;
  double           epsilon        = 1e-6;
  double           explore_angle  = 8.0 * std::numbers::pi / 180.0;
  double           gain           = 0.1;
  double           damping        = 1e-3;
  double           max_step       = 0.05;
  double           converge_eps   = 2.0;
  int              max_iters      = 300;
  double           rate_hz        = 1.0;
  BroydenNumerator numerator      = BroydenNumerator::DeltaE;

  void validate() const
  {
    auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!positive(broyden_lambda) || !positive(epsilon) || !positive(explore_angle) || !positive(gain) ||
        !positive(max_step) || !positive(converge_eps) || !positive(rate_hz) || max_iters <= 0)
    {
      throw Error(ErrorCode::InvalidArgument, "servo parameters must be positive");
    }
    if (gain > 1.0)
    {
      throw Error(ErrorCode::InvalidArgument, "servo gain must not exceed 1");
    }
    if (!(damping >= 0.0) || !std::isfinite(damping))
    {
      throw Error(ErrorCode::InvalidArgument, "damping must be finite and >= 0");
    }
  }
};

struct JacobianEstimate
{
  Matrix                   matrix;
  int                      update_count = 0;
  std::vector<std::string> warnings;

  Eigen::Index error_dim() const noexcept { return matrix.rows(); }
  Eigen::Index n_joints() const noexcept { return matrix.cols(); }
  bool         singular() const noexcept { return !warnings.empty(); }
};

enum class ServoStatus
{
  Bootstrapping,
  Running,
  Converged,
  Diverged,
  FeatureLost,
};

constexpr std::string_view to_string(ServoStatus s) noexcept
{
  switch (s)
  {
  case ServoStatus::Bootstrapping: return "Bootstrapping";
  case ServoStatus::Running: return "Running";
  case ServoStatus::Converged: return "Converged";
  case ServoStatus::Diverged: return "Diverged";
  case ServoStatus::FeatureLost: return "FeatureLost";
  }
  return "?";
}

struct ServoState
{
  Vector           q;
  Vector           e;
  JacobianEstimate jacobian;
  int              iteration = 0;
  ServoStatus      status    = ServoStatus::Bootstrapping;
  std::string      reason;
};

struct LogEntry
{
  int    iteration = 0;
  Vector q;
  Vector e;
  double norm = 0.0;  // infinity norm of e
};

struct ServoResult
{
  ServoState            state;
  std::vector<LogEntry> log;
};

/// Error measured at an absolute joint configuration.
using Measure = std::function<Vector(Vector const &q)>;
/// Applies a relative joint command and returns the error after the move.
using Plant = std::function<Vector(Vector const &delta_q)>;

inline Vector to_vector(geometry::ErrorVector const &e)
{
  return Eigen::Map<Vector const>(e.values.data(), static_cast<Eigen::Index>(e.values.size()));
}

inline double norm_inf(Vector const &v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

/// Central-difference exploration along each joint axis; ends back at q0.
inline JacobianEstimate bootstrap_jacobian(Measure const &measure, Vector const &q0, ServoConfig const &cfg)
{
  cfg.validate();
  double const     delta = cfg.explore_angle;
  JacobianEstimate J;
  auto             probe = [&](Vector const &q) -> Vector {
    try
    {
      return measure(q);
    }
    catch (Error const &e)
    {
      throw Error(ErrorCode::FeatureLost, "bootstrap measurement failed: " + e.detail());
    }
  };
  for (Eigen::Index i = 0; i < q0.size(); ++i)
  {
    Vector qp = q0;
    Vector qm = q0;
    qp[i] += delta;
    qm[i] -= delta;
    Vector const ep = probe(qp);
    Vector const em = probe(qm);
    if (J.matrix.size() == 0)
    {
      J.matrix = Matrix::Zero(ep.size(), q0.size());
    }
    if (ep.size() != J.matrix.rows() || em.size() != J.matrix.rows())
    {
      throw Error(ErrorCode::NumericalFailure, "error dimension changed during bootstrap");
    }
    J.matrix.col(i) = (ep - em) / (2.0 * delta);
    if (J.matrix.col(i).norm() < 1e-12)
    {
      J.warnings.push_back("SingularBootstrap: joint " + std::to_string(i + 1) + " has no image sensitivity");
    }
  }
  (void)probe(q0);
  return J;
}

/// Rank-one update  J + lambda (delta_e - J dq) dq^T / (dq^T dq + epsilon).
inline JacobianEstimate broyden_update(JacobianEstimate const &J, Vector const &delta_e, Vector const &delta_q,
                                       ServoConfig const &cfg)
{
  if (delta_q.size() != J.n_joints() || delta_e.size() != J.error_dim())
  {
    throw Error(ErrorCode::InvalidArgument, "Broyden update shape mismatch");
  }
  JacobianEstimate out = J;
  double const     den = delta_q.squaredNorm() + cfg.epsilon;
  out.matrix += cfg.broyden_lambda * ((delta_e - J.matrix * delta_q) * delta_q.transpose()) / den;
  ++out.update_count;
  return out;
}

/// Damped least-squares joint step  -gain (J^T J + damping I)^-1 J^T e, clamped.
inline Vector compute_step(JacobianEstimate const &J, Vector const &e, ServoConfig const &cfg)
{
  if (e.size() != J.error_dim())
  {
    throw Error(ErrorCode::InvalidArgument, "error dimension does not match the Jacobian");
  }
  Matrix const normal = J.matrix.transpose() * J.matrix + cfg.damping * Matrix::Identity(J.n_joints(), J.n_joints());
  Eigen::LDLT<Matrix> ldlt(normal);
  if (ldlt.info() != Eigen::Success)
  {
    throw Error(ErrorCode::NumericalFailure, "normal equations could not be factored");
  }
  Vector step = ldlt.solve(J.matrix.transpose() * e);
  if (ldlt.info() != Eigen::Success || !step.allFinite())
  {
    throw Error(ErrorCode::NumericalFailure, "normal equations solve failed");
  }
  step *= -cfg.gain;
  return step.cwiseMax(-cfg.max_step).cwiseMin(cfg.max_step);
}

/// Bootstrap, then measure / step / move / Broyden-update until the infinity
/// norm of the error drops below converge_eps. Failures are reported through
/// the returned status; the log has one entry per iteration reached.
inline ServoResult servo_loop(Plant const &plant, Vector const &q0, ServoConfig const &cfg)
{
  cfg.validate();
  ServoResult result;
  auto       &state = result.state;
  state.q           = q0;
  state.status      = ServoStatus::Bootstrapping;

  Vector current = q0;
  Vector last_e;
  auto   move_to = [&](Vector const &q) -> Vector {
    last_e  = plant(q - current);
    current = q;
    return last_e;
  };

  try
  {
    last_e           = plant(Vector::Zero(q0.size()));
    state.jacobian   = bootstrap_jacobian(move_to, q0, cfg);
    state.e          = last_e;
  }
  catch (Error const &e)
  {
    state.status = ServoStatus::FeatureLost;
    state.reason = e.detail();
    return result;
  }
  state.status = ServoStatus::Running;

  for (;;)
  {
    double const norm = norm_inf(state.e);
    result.log.push_back({state.iteration, state.q, state.e, norm});
    if (!state.e.allFinite())
    {
      state.status = ServoStatus::Diverged;
      state.reason = "non-finite error";
      break;
    }
    if (norm < cfg.converge_eps)
    {
      state.status = ServoStatus::Converged;
      break;
    }
    if (state.iteration >= cfg.max_iters)
    {
      state.status = ServoStatus::Diverged;
      state.reason = "iteration budget exhausted";
      break;
    }
    Vector dq;
    try
    {
      dq = compute_step(state.jacobian, state.e, cfg);
    }
    catch (Error const &e)
    {
      state.status = ServoStatus::Diverged;
      state.reason = e.detail();
      break;
    }
    Vector e_new;
    try
    {
      e_new = plant(dq);
    }
    catch (Error const &e)
    {
      state.status = ServoStatus::FeatureLost;
      state.reason = e.detail();
      break;
    }
    if (e_new.size() != state.e.size())
    {
      state.status = ServoStatus::FeatureLost;
      state.reason = "error dimension changed";
      break;
    }
    Vector const numerator = cfg.numerator == BroydenNumerator::DeltaE ? Vector(e_new - state.e) : e_new;
    state.jacobian         = broyden_update(state.jacobian, numerator, dq, cfg);
    state.q += dq;
    state.e = e_new;
    ++state.iteration;
  }
  return result;
}

namespace detail {

inline std::string fmt(double v)
{
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// CSV with header iteration,q_1..q_n,e_1..e_m,norm.
inline std::string trajectory_csv(std::vector<LogEntry> const &log)
{
  std::string out = "iteration";
  if (log.empty())
  {
    return out + ",norm\n";
  }
  for (Eigen::Index i = 0; i < log.front().q.size(); ++i)
  {
    out += ",q_" + std::to_string(i + 1);
  }
  for (Eigen::Index i = 0; i < log.front().e.size(); ++i)
  {
    out += ",e_" + std::to_string(i + 1);
  }
  out += ",norm\n";
  for (auto const &row : log)
  {
    out += std::to_string(row.iteration);
    for (double v : row.q)
    {
      out += "," + detail::fmt(v);
    }
    for (double v : row.e)
    {
      out += "," + detail::fmt(v);
    }
    out += "," + detail::fmt(row.norm) + "\n";
  }
  return out;
}

}  // namespace kgservo::servo
