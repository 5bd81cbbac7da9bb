#pragma once

#include <stdexcept>
#include <string>

namespace trustdyn {

/// Coarse failure class, mapped to process exit codes by the CLI.
enum class ErrorCode {
  usage = 1,          // bad arguments / bad configuration
  data = 2,           // malformed or degenerate input data
  nonconvergence = 3, // an iterative fit failed to converge
  internal = 4,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

inline Error usage_error(const std::string& what) { return Error(ErrorCode::usage, what); }
inline Error data_error(const std::string& what) { return Error(ErrorCode::data, what); }

} // namespace trustdyn
