#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace geokpi::kpi {

inline constexpr std::int64_t sample_interval_s = 900;
inline constexpr int history_length = 96;
inline constexpr int horizon_length = 32;
inline constexpr int window_length = history_length + horizon_length;
inline constexpr double default_train_fraction = 0.8;
inline constexpr double clamp_low = -0.5;
inline constexpr double clamp_high = 1.5;

struct NormParams {
  double min = 0.0;
  double max = 0.0;
  bool degenerate = false;  ///< max == min over the fit range

  double apply(double x) const noexcept;
  double invert(double y) const noexcept;
};

/// Uniformly sampled KPI series; timestamp i is start + i * 900 s.
struct KpiSeries {
  std::string cell_id;
  std::int64_t start_epoch_s = 0;
  std::vector<double> values;
  std::optional<NormParams> norm;

  std::size_t size() const noexcept { return values.size(); }
  std::int64_t timestamp(std::size_t i) const noexcept {
    return start_epoch_s + static_cast<std::int64_t>(i) * sample_interval_s;
  }
  /// Same start and length.
  bool same_grid(const KpiSeries& other) const noexcept {
    return start_epoch_s == other.start_epoch_s && values.size() == other.values.size();
  }
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;  ///< exclusive
};

struct NormalizeResult {
  KpiSeries series;
  std::size_t clamp_count = 0;
};

/// Min-max scaling with parameters fitted on `fit_range`. Samples outside
/// the range use the same parameters and are clamped to [-0.5, 1.5]. A
/// constant fit range maps every sample to 0 and marks the parameters
/// degenerate.
NormalizeResult normalize(const KpiSeries& raw, IndexRange fit_range);
KpiSeries denormalize(const KpiSeries& normalized);

/// Supervised windows: input = values[i, i+96), target = values[i+96, i+128).
struct WindowSet {
  std::vector<double> inputs;   ///< N x 96, row-major
  std::vector<double> targets;  ///< N x 32, row-major
  std::vector<std::size_t> origin_indices;

  std::size_t size() const noexcept { return origin_indices.size(); }
  const double* input(std::size_t i) const noexcept { return inputs.data() + i * history_length; }
  const double* target(std::size_t i) const noexcept {
    return targets.data() + i * horizon_length;
  }
};

/// Stride-one windows; `offset` is added to the recorded origins.
/// Throws too_short naming the shortfall when fewer than 128 samples.
WindowSet make_windows(const std::vector<double>& values, std::size_t offset = 0);
WindowSet make_windows(const KpiSeries& series);

struct SplitSegments {
  KpiSeries train;
  KpiSeries test;
  std::size_t boundary = 0;  ///< index of the first test sample
};

/// First floor(fraction * T) samples train, the rest test. Requires T >= 160
/// and a windowable training segment.
SplitSegments temporal_split(const KpiSeries& series, double train_fraction = default_train_fraction);

/// Pointwise mean of each cluster's member series. Throws alignment error
/// when members disagree on their timestamp grid.
std::map<int, KpiSeries> cluster_average(const std::map<int, std::vector<KpiSeries>>& members);
KpiSeries average_series(const std::vector<KpiSeries>& members, const std::string& id);

/// Rows of cell_id, ISO-8601 timestamp, kpi_name, value; keeps `kpi_name`
/// only. Rejects gaps unless `max_fill` > 0, in which case runs of at most
/// `max_fill` missing samples are forward-filled.
struct IngestResult {
  std::map<std::string, KpiSeries> series;
  std::map<std::string, std::size_t> filled_samples;  ///< provenance of gap filling
};
IngestResult read_kpi_csv(const std::filesystem::path& path, const std::string& kpi_name,
                          int max_fill = 0);
void write_kpi_csv(const std::filesystem::path& path, const std::string& kpi_name,
                   const std::vector<KpiSeries>& series);

}  // namespace geokpi::kpi
