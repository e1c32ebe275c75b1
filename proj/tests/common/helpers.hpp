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

#include <gtest/gtest.h>

#include "kgservo/error.hpp"

#include "common/tempdir.hpp"

namespace kgservo_test {

/// Runs `fn` and returns the kgservo error code it throws.
template <typename Fn>
::testing::AssertionResult throws_code(Fn &&fn, kgservo::ErrorCode expected)
{
  try
  {
    fn();
  }
  catch (kgservo::Error const &e)
  {
    if (e.code() == expected)
    {
      return ::testing::AssertionSuccess();
    }
    return ::testing::AssertionFailure() << "threw " << e.what();
  }
  catch (std::exception const &e)
  {
    return ::testing::AssertionFailure() << "threw foreign exception " << e.what();
  }
  return ::testing::AssertionFailure() << "did not throw";
}

#define EXPECT_CODE(stmt, code) EXPECT_TRUE(::kgservo_test::throws_code([&] { (void)(stmt); }, ::kgservo::ErrorCode::code))

}  // namespace kgservo_test
