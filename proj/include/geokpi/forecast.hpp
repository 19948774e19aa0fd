#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "geokpi/kpi.hpp"
#include "geokpi/lstm.hpp"

namespace geokpi::forecast {

/// Trained per-cluster forecaster plus everything needed to reproduce and
/// serve it.
struct ForecastModel {
  int cluster = 0;
  TrainingConfig config;
  LstmNetwork network;
  std::vector<double> loss_history;
  /// Cells whose series entered the training average.
  std::vector<std::string> training_cells;
  /// Trailing 96 samples of the average's training segment.
  std::vector<double> seed_history;
  /// Mean of the members' min-max parameters, for denormalizing forecasts.
  kpi::NormParams cluster_norm;

  static constexpr int input_length = kpi::history_length;
  static constexpr int output_length = kpi::horizon_length;
};

/// Trains on the training segment of a normalized cluster-average series.
/// Throws degenerate_series when that segment is constant.
ForecastModel train_cluster_model(const kpi::KpiSeries& average, const TrainingConfig& config,
                                  int cluster = 0);

/// 32 forecasts clamped to [-0.5, 1.5]. Throws shape error for a history
/// that is not 96 finite values.
std::vector<double> predict(const ForecastModel& model, std::span<const double> history);

/// Forecasts for every window (rows of the returned N x 32 block).
std::vector<double> predict_windows(const ForecastModel& model, const kpi::WindowSet& windows);

struct CellMetrics {
  int cluster = 0;
  std::string cell_id;
  double mse = 0.0;
  double mae = 0.0;
  double persistence_mse = 0.0;
  double persistence_mae = 0.0;
  /// Errors in the cell's original units.
  double denorm_mse = 0.0;
  double denorm_mae = 0.0;
  /// Largest pointwise |error| in normalized units.
  double max_abs_error = 0.0;
  std::size_t windows = 0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};

MeanStd mean_std(std::span<const double> values);

struct ClusterSummary {
  int cluster = 0;
  std::size_t cells = 0;
  MeanStd mse, mae, persistence_mse;
};

struct MetricsReport {
  std::string experiment;  ///< "per-cluster" or "cold-start"
  std::vector<CellMetrics> cells;

  /// Per-cluster mean and std over member cells, recomputed from `cells`.
  std::map<int, ClusterSummary> cluster_summaries() const;
  /// Mean and std over all evaluated cells.
  ClusterSummary overall() const;

  void append(const MetricsReport& other);
  std::string to_csv() const;
  static MetricsReport from_csv(const std::string& text);
};

/// Scores `model` on the test segment of every normalized cell series.
MetricsReport evaluate_cells(const ForecastModel& model, const std::vector<kpi::KpiSeries>& cells,
                             const std::string& experiment = "per-cluster");

/// Naive baseline: repeat the last observed value across the horizon.
CellMetrics persistence_metrics(const kpi::KpiSeries& cell);

struct ColdStartResult {
  MetricsReport report;
  std::map<int, std::vector<std::string>> masked;
  std::map<int, ForecastModel> models;
  std::vector<int> skipped;
};

inline constexpr int min_cold_start_members = 5;

/// Per cluster: masks ceil(fraction * m) members by seed, trains on the
/// average of the rest and evaluates on the masked cells only. Clusters with
/// fewer than five members are skipped.
ColdStartResult cold_start_experiment(const std::map<int, std::vector<kpi::KpiSeries>>& members,
                                      double mask_fraction, std::uint64_t seed,
                                      const TrainingConfig& config);

/// Mean of members' series that are not degenerate, with averaged norm params.
kpi::KpiSeries training_average(const std::vector<kpi::KpiSeries>& members, const std::string& id,
                                std::vector<std::string>* used = nullptr,
                                kpi::NormParams* mean_norm = nullptr);

void save_model(const ForecastModel& model, const std::filesystem::path& path);
ForecastModel load_model(const std::filesystem::path& path);

}  // namespace geokpi::forecast
