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

#include <stdexcept>
#include <string>
#include <string_view>

namespace kgservo {

enum class ErrorCode
{
  CoincidentPoints,
  PointAtInfinity,
  EmptyMask,
  InsufficientSupport,
  DegenerateSpread,
  UnresolvedSlot,
  FeatureLost,
  SingularBootstrap,
  NumericalFailure,
  OutOfView,
  SchemaViolation,
  ParseError,
  NoUsableExperience,
  MissingLeafResult,
  InconsistentTrace,
  EmptyStore,
  PersistFailure,
  ZeroVariance,
  LengthMismatch,
  DatasetFormat,
  InvalidArgument,
  IoError,
  SidecarError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept
{
  switch (code)
  {
  case ErrorCode::CoincidentPoints: return "CoincidentPoints";
  case ErrorCode::PointAtInfinity: return "PointAtInfinity";
  case ErrorCode::EmptyMask: return "EmptyMask";
  case ErrorCode::InsufficientSupport: return "InsufficientSupport";
  case ErrorCode::DegenerateSpread: return "DegenerateSpread";
  case ErrorCode::UnresolvedSlot: return "UnresolvedSlot";
  case ErrorCode::FeatureLost: return "FeatureLost";
  case ErrorCode::SingularBootstrap: return "SingularBootstrap";
  case ErrorCode::NumericalFailure: return "NumericalFailure";
  case ErrorCode::OutOfView: return "OutOfView";
  case ErrorCode::SchemaViolation: return "SchemaViolation";
  case ErrorCode::ParseError: return "ParseError";
  case ErrorCode::NoUsableExperience: return "NoUsableExperience";
  case ErrorCode::MissingLeafResult: return "MissingLeafResult";
  case ErrorCode::InconsistentTrace: return "InconsistentTrace";
  case ErrorCode::EmptyStore: return "EmptyStore";
  case ErrorCode::PersistFailure: return "PersistFailure";
  case ErrorCode::ZeroVariance: return "ZeroVariance";
  case ErrorCode::LengthMismatch: return "LengthMismatch";
  case ErrorCode::DatasetFormat: return "DatasetFormat";
  case ErrorCode::InvalidArgument: return "InvalidArgument";
  case ErrorCode::IoError: return "IoError";
  case ErrorCode::SidecarError: return "SidecarError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// CLI maps them onto its exit-code contract.
class Error : public std::runtime_error
{
public:
  Error(ErrorCode code, std::string const &detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail)
    , code_(code)
    , detail_(detail)
  {}

  ErrorCode          code() const noexcept { return code_; }
  std::string const &detail() const noexcept { return detail_; }

private:
  ErrorCode   code_;
  std::string detail_;
};

}  // namespace kgservo
