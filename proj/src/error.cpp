#include "mdpo/error.hpp"

namespace mdpo {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::contract: return "contract";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::domain: return "domain";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::training: return "training";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::build: return "build";
    case ErrorKind::pipeline: return "pipeline";
    case ErrorKind::staleness: return "staleness";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::contract: return 10;
    case ErrorKind::configuration: return 11;
    case ErrorKind::domain: return 12;
    case ErrorKind::numeric: return 13;
    case ErrorKind::training: return 14;
    case ErrorKind::integrity: return 15;
    case ErrorKind::build: return 16;
    case ErrorKind::pipeline: return 17;
    case ErrorKind::staleness: return 18;
  }
  return 1;
}

}  // namespace mdpo
