#pragma once

#include <stdexcept>
#include <string>

namespace mdpo {

enum class ErrorKind {
  contract,
  configuration,
  domain,
  numeric,
  training,
  integrity,
  build,
  pipeline,
  staleness,
};

const char* to_string(ErrorKind kind);

// Process exit code used by the CLI for each error category.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error(ErrorKind::contract, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::configuration, w) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error(ErrorKind::domain, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, w) {}
};
struct IntegrityError : Error {
  explicit IntegrityError(const std::string& w) : Error(ErrorKind::integrity, w) {}
};
struct BuildError : Error {
  explicit BuildError(const std::string& w) : Error(ErrorKind::build, w) {}
};
struct PipelineError : Error {
  explicit PipelineError(const std::string& w) : Error(ErrorKind::pipeline, w) {}
};
struct StalenessError : Error {
  explicit StalenessError(const std::string& w) : Error(ErrorKind::staleness, w) {}
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& w, long step)
      : Error(ErrorKind::training, w + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace mdpo
