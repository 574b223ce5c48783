// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace pwtk {

enum class ErrKind {
  usage,         // bad CLI arguments or config document
  parameter,     // precondition violated by a caller-supplied value
  format,        // malformed file contents (magic, truncation, version)
  unsupported,   // well-formed but outside the supported subset
  rank,          // wrong tensor dimensionality
  shape,         // tensor extent mismatch
  mask,          // empty or unusable mask
  data,          // missing or inconsistent dataset pieces
  incompatible,  // checkpoint does not match the declared architecture
  io,            // filesystem failure
  sampling,      // no valid sample positions
  degenerate,    // degenerate signal or value range
  numeric        // numerical failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrKind kind() const { return kind_; }

  // Process exit code contract: 1 usage, 2 data/format, 3 numerical.
  int exit_code() const {
    switch (kind_) {
      case ErrKind::usage:
      case ErrKind::parameter:
        return 1;
      case ErrKind::degenerate:
      case ErrKind::numeric:
        return 3;
      default:
        return 2;
    }
  }

 private:
  ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

// Worker cap shared by all kernels. Partitioning never changes results:
// every parallel loop owns disjoint output elements.
int thread_count();
void set_thread_count(int n);

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

// One machine-readable JSON line per major pipeline step, on stderr.
void log_step(const std::string& stage, const std::string& event, const std::string& detail_json = "{}");

}  // namespace pwtk
