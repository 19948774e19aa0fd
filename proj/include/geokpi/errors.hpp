#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace geokpi {

enum class ErrorCode {
  validation,
  degenerate_geometry,
  polar_unsupported,
  out_of_extent,
  insufficient_coverage,
  layout_validation,
  season_mismatch,
  stratification,
  registry,
  not_initialized,
  insufficient_data,
  ingestion,
  too_short,
  alignment,
  degenerate_series,
  shape,
  nothing_to_evaluate,
  not_ready,
  oracle_useless,
  stage_failure,
  io,
  locked,
};

/// Stable machine-readable name, used in CLI messages and HTTP error bodies.
std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

/// Raised by the pipeline when a stage fails; carries the stage name.
class StageError : public Error {
public:
  StageError(std::string stage, ErrorCode cause, const std::string& message)
      : Error(ErrorCode::stage_failure, "stage '" + stage + "' failed: " + message),
        stage_(std::move(stage)), cause_(cause) {}

  const std::string& stage() const noexcept { return stage_; }
  ErrorCode cause() const noexcept { return cause_; }

private:
  std::string stage_;
  ErrorCode cause_;
};

}  // namespace geokpi
