// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace dryflow {

/// Error categories map onto the CLI exit codes (config 2, data 3, numeric 4).
enum class ErrorKind { config, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::config: return 2;
      case ErrorKind::data: return 3;
      case ErrorKind::numeric: return 4;
    }
    return 1;
  }

 private:
  ErrorKind kind_;
};

namespace detail {
template <class... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}
}  // namespace detail

template <class... Args>
[[noreturn]] void fail(ErrorKind kind, Args&&... args) {
  throw Error(kind, detail::concat(std::forward<Args>(args)...));
}

template <class... Args>
void require(bool cond, ErrorKind kind, Args&&... args) {
  if (!cond) fail(kind, std::forward<Args>(args)...);
}

}  // namespace dryflow
