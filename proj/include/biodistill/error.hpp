#pragma once

#include <stdexcept>
#include <string>

namespace biodistill {

enum class ErrorKind {
  parse,
  conflict,
  not_found,
  undefined_ic,
  empty_terms,
  validation,
  config,
  transport,
  protocol,
  generation,
  render,
  judge,
  labeling,
  io,
  aborted,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

  // Transport failures may be retried by the caller.
  bool retryable() const noexcept { return kind_ == ErrorKind::transport; }

 private:
  ErrorKind kind_;
};

}  // namespace biodistill
