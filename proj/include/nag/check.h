// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace nag {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
[[noreturn]] inline void fail(const char* expr, const std::string& msg) {
  std::ostringstream os;
  os << "check failed: " << expr;
  if (!msg.empty()) os << " (" << msg << ")";
  throw Error(os.str());
}
}  // namespace detail

}  // namespace nag

#define NAG_CHECK(cond, msg)                                  \
  do {                                                        \
    if (!(cond)) ::nag::detail::fail(#cond, (msg));           \
  } while (0)
