#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tensorforge {

// Error categories surfaced by every layer. The CLI prints the category as a
// message prefix and maps any Error to a nonzero exit code.
enum class ErrorKind {
  shape,
  argument,
  label,
  invalid_handle,
  invalid_stream,
  pool_integrity,
  allocation_failure,
  bounds,
  graph,
  state,
  format,
  iteration,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::argument: return "argument";
    case ErrorKind::label: return "label";
    case ErrorKind::invalid_handle: return "invalid-handle";
    case ErrorKind::invalid_stream: return "invalid-stream";
    case ErrorKind::pool_integrity: return "pool-integrity";
    case ErrorKind::allocation_failure: return "allocation-failure";
    case ErrorKind::bounds: return "bounds";
    case ErrorKind::graph: return "graph";
    case ErrorKind::state: return "state";
    case ErrorKind::format: return "format";
    case ErrorKind::iteration: return "iteration";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
        kind_(kind),
        detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace tensorforge
