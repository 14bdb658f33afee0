#include "biodistill/error.hpp"

namespace biodistill {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse: return "parse error";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::not_found: return "not found";
    case ErrorKind::undefined_ic: return "undefined information content";
    case ErrorKind::empty_terms: return "empty term set";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::config: return "configuration error";
    case ErrorKind::transport: return "transport error";
    case ErrorKind::protocol: return "protocol error";
    case ErrorKind::generation: return "generation error";
    case ErrorKind::render: return "render error";
    case ErrorKind::judge: return "judge error";
    case ErrorKind::labeling: return "labeling error";
    case ErrorKind::io: return "i/o error";
    case ErrorKind::aborted: return "run aborted";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

}  // namespace biodistill
