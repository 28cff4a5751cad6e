#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace vcmqp {

// Error taxonomy mirrors the CLI exit-code contract:
//   0 success, 1 usage, 2 data error, 3 external-tool error.
// Usage errors are handled by the argument parser; everything that stems
// from malformed or inconsistent input data raises DataError.

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Failure of a spawned encoder/decoder process. Carries whatever the tool
// wrote to stderr so the caller can surface it.
class ExternalToolError : public std::runtime_error {
 public:
  explicit ExternalToolError(const std::string& what, std::string stderr_text = {})
      : std::runtime_error(what), stderr_text_(std::move(stderr_text)) {}

  const std::string& stderr_text() const { return stderr_text_; }

 private:
  std::string stderr_text_;
};

}  // namespace vcmqp
