#include "geokpi/errors.hpp"

namespace geokpi {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::degenerate_geometry: return "degenerate_geometry";
    case ErrorCode::polar_unsupported: return "polar_unsupported";
    case ErrorCode::out_of_extent: return "out_of_extent";
    case ErrorCode::insufficient_coverage: return "insufficient_coverage";
    case ErrorCode::layout_validation: return "layout_validation";
    case ErrorCode::season_mismatch: return "season_mismatch";
    case ErrorCode::stratification: return "stratification";
    case ErrorCode::registry: return "registry";
    case ErrorCode::not_initialized: return "not_initialized";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::ingestion: return "ingestion";
    case ErrorCode::too_short: return "too_short";
    case ErrorCode::alignment: return "alignment";
    case ErrorCode::degenerate_series: return "degenerate_series";
    case ErrorCode::shape: return "shape";
    case ErrorCode::nothing_to_evaluate: return "nothing_to_evaluate";
    case ErrorCode::not_ready: return "not_ready";
    case ErrorCode::oracle_useless: return "oracle_useless";
    case ErrorCode::stage_failure: return "stage_failure";
    case ErrorCode::io: return "io";
    case ErrorCode::locked: return "locked";
  }
  return "unknown";
}

}  // namespace geokpi
