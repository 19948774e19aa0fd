#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geokpi/forecast.hpp"
#include "geokpi/geometry.hpp"
#include "geokpi/profiling.hpp"
#include "geokpi/raster.hpp"
#include "geokpi/vision.hpp"

namespace geokpi::pipeline {

/// Everything a run needs. Relative paths are resolved against `base_dir`.
struct PipelineConfig {
  std::filesystem::path base_dir;
  std::filesystem::path cells_csv;
  std::filesystem::path raster_manifest;
  std::filesystem::path kpi_csv;
  std::filesystem::path output_dir;
  std::string kpi_name;
  std::string backbone = "toy";
  std::string backbone_weights;
  double width_ratio = 1.0;
  int max_fill = 0;  ///< forward-fill up to this many missing samples; 0 rejects gaps
  profiling::ClusterOptions clustering;
  forecast::TrainingConfig training;
  bool cold_start = true;
  double mask_fraction = 0.2;
  std::uint64_t seed = 42;

  /// Throws validation errors for missing or out-of-range fields.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"geometry",   "patches",  "embeddings",
                                              "clustering", "training", "evaluation"};
  return names;
}

struct StageStatus {
  std::string name;
  std::string status = "pending";  ///< pending, running, completed, failed
  std::string message;
  double seconds = 0.0;
};

struct PipelineRun {
  std::string run_id;
  std::string config_hash;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::filesystem::path run_dir;
  std::vector<StageStatus> stages;
  /// Artifact path relative to run_dir -> sha256.
  std::map<std::string, std::string> artifacts;
  std::vector<std::string> inputs_read;
  bool completed = false;

  nlohmann::json manifest() const;
  static PipelineRun from_manifest(const nlohmann::json& j, const std::filesystem::path& run_dir);
};

/// Hash of the canonical config document; the run id is its first 16 hex digits.
std::string config_hash(const PipelineConfig& config);

/// Runs every stage into <output_dir>/runs/<run_id>, then points
/// <output_dir>/current at it. A failing stage raises StageError after the
/// manifest has recorded the failure; earlier artifacts stay on disk.
PipelineRun run_pipeline(const PipelineConfig& config);

/// Recomputes every artifact checksum and compares with the manifest.
bool verify_artifacts(const PipelineRun& run);

// --- serving ----------------------------------------------------------------

/// Immutable in-memory view of a completed run.
struct RunSnapshot {
  PipelineRun run;
  PipelineConfig config;
  profiling::ClusterModel clusters;
  std::map<int, forecast::ForecastModel> models;
  std::shared_ptr<const vision::Backbone> backbone;
  raster::RasterStore rasters;
  forecast::MetricsReport experiment1;
  std::optional<forecast::MetricsReport> experiment2;
  std::map<std::string, kpi::KpiSeries> normalized;  ///< per cell, with norm params
};

/// Throws not_ready when the run directory holds no completed run.
std::shared_ptr<const RunSnapshot> load_run(const std::filesystem::path& run_dir);
/// Follows <output_dir>/current.
std::shared_ptr<const RunSnapshot> load_current(const std::filesystem::path& output_dir);

struct ClusterMetricsSummary {
  std::size_t member_count = 0;
  forecast::MeanStd test_mse, test_mae;
};

struct WhatIfResponse {
  std::string run_id;
  int cluster = 0;
  double distance = 0.0;
  double ood_threshold = 0.0;
  bool out_of_distribution = false;
  std::vector<double> forecast_normalized;
  std::vector<double> forecast_denormalized;
  std::string forecast_kind = "cluster-typical forecast";
  std::int64_t forecast_start_epoch_s = 0;
  ClusterMetricsSummary cluster_summary;
  geometry::CoverageBox coverage;
};

/// Throws out_of_extent for a candidate outside the raster store and
/// not_ready for a missing snapshot.
WhatIfResponse what_if(const geometry::CellConfig& candidate, const RunSnapshot* run);

ClusterMetricsSummary cluster_summary(const RunSnapshot& run, int cluster);

struct CellForecast {
  std::string run_id;
  std::string cell_id;
  int cluster = 0;
  std::vector<std::int64_t> timestamps;  ///< 32 forecast timestamps
  std::vector<double> history;           ///< 96 normalized inputs
  std::vector<double> forecast;          ///< normalized
  std::vector<double> actual;            ///< normalized
  std::vector<double> forecast_denormalized;
  std::vector<double> actual_denormalized;
};

/// Forecast for the `window`-th test window of a known cell.
CellForecast cell_forecast(const RunSnapshot& run, const std::string& cell_id,
                           std::size_t window = 0);

}  // namespace geokpi::pipeline
