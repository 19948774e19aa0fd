#include "geokpi/kpi.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "geokpi/errors.hpp"
#include "geokpi/util.hpp"

namespace geokpi::kpi {

double NormParams::apply(double x) const noexcept {
  if (degenerate) return 0.0;
  return (x - min) / (max - min);
}

double NormParams::invert(double y) const noexcept {
  if (degenerate) return min;
  return y * (max - min) + min;
}

NormalizeResult normalize(const KpiSeries& raw, IndexRange fit_range) {
  if (fit_range.begin >= fit_range.end || fit_range.end > raw.size()) {
    throw Error(ErrorCode::validation, "empty or out-of-bounds normalization range");
  }
  for (double v : raw.values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::validation, "series '" + raw.cell_id + "' has non-finite values");
    }
  }
  const auto first = raw.values.begin() + static_cast<std::ptrdiff_t>(fit_range.begin);
  const auto last = raw.values.begin() + static_cast<std::ptrdiff_t>(fit_range.end);
  const auto [lo, hi] = std::minmax_element(first, last);

  NormalizeResult out;
  out.series = raw;
  NormParams p{*lo, *hi, *hi == *lo};
  out.series.norm = p;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double y = p.apply(raw.values[i]);
    if (y < clamp_low || y > clamp_high) {
      y = std::clamp(y, clamp_low, clamp_high);
      ++out.clamp_count;
    }
    out.series.values[i] = y;
  }
  return out;
}

KpiSeries denormalize(const KpiSeries& normalized) {
  if (!normalized.norm) {
    throw Error(ErrorCode::validation, "series '" + normalized.cell_id + "' is not normalized");
  }
  KpiSeries out = normalized;
  for (auto& v : out.values) v = normalized.norm->invert(v);
  out.norm.reset();
  return out;
}

WindowSet make_windows(const std::vector<double>& values, std::size_t offset) {
  const std::size_t t = values.size();
  if (t < window_length) {
    throw Error(ErrorCode::too_short, "series has " + std::to_string(t) + " samples, " +
                                          std::to_string(window_length - t) +
                                          " short of one window");
  }
  const std::size_t n = t - window_length + 1;
  WindowSet w;
  w.inputs.resize(n * history_length);
  w.targets.resize(n * horizon_length);
  w.origin_indices.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(i), history_length,
                w.inputs.begin() + static_cast<std::ptrdiff_t>(i * history_length));
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(i + history_length), horizon_length,
                w.targets.begin() + static_cast<std::ptrdiff_t>(i * horizon_length));
    w.origin_indices[i] = offset + i;
  }
  return w;
}

WindowSet make_windows(const KpiSeries& series) { return make_windows(series.values); }

SplitSegments temporal_split(const KpiSeries& series, double train_fraction) {
  const std::size_t t = series.size();
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::validation, "train fraction must lie in (0, 1)");
  }
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(t)));
  // The test segment only has to hold one horizon here; evaluation checks
  // that it is windowable on its own.
  if (t < 160 || n_train < window_length || t - n_train < horizon_length) {
    throw Error(ErrorCode::too_short, "series '" + series.cell_id + "' with " +
                                          std::to_string(t) + " samples is too short to split");
  }
  SplitSegments s;
  s.boundary = n_train;
  s.train = series;
  s.train.values.assign(series.values.begin(),
                        series.values.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test = series;
  s.test.start_epoch_s = series.timestamp(n_train);
  s.test.values.assign(series.values.begin() + static_cast<std::ptrdiff_t>(n_train),
                       series.values.end());
  return s;
}

KpiSeries average_series(const std::vector<KpiSeries>& members, const std::string& id) {
  if (members.empty()) throw Error(ErrorCode::validation, "cannot average an empty cluster");
  KpiSeries avg;
  avg.cell_id = id;
  avg.start_epoch_s = members.front().start_epoch_s;
  avg.values.assign(members.front().size(), 0.0);
  for (const auto& m : members) {
    if (!m.same_grid(members.front())) {
      throw Error(ErrorCode::alignment, "series '" + m.cell_id + "' does not share the grid of '" +
                                            members.front().cell_id + "'");
    }
    for (std::size_t i = 0; i < m.size(); ++i) avg.values[i] += m.values[i];
  }
  const double n = static_cast<double>(members.size());
  for (auto& v : avg.values) v /= n;
  return avg;
}

std::map<int, KpiSeries> cluster_average(const std::map<int, std::vector<KpiSeries>>& members) {
  std::map<int, KpiSeries> out;
  for (const auto& [cluster, series] : members) {
    out.emplace(cluster, average_series(series, "cluster_" + std::to_string(cluster)));
  }
  return out;
}

IngestResult read_kpi_csv(const std::filesystem::path& path, const std::string& kpi_name,
                          int max_fill) {
  const auto table = util::read_csv(path);
  const auto id_col = table.column("cell_id");
  const auto ts_col = table.column("timestamp");
  const auto name_col = table.column("kpi_name");
  const auto value_col = table.column("value");

  std::map<std::string, std::map<std::int64_t, double>> samples;
  for (const auto& row : table.rows) {
    if (row[name_col] != kpi_name) continue;
    const auto ts = util::parse_iso8601(row[ts_col]);
    const double v = util::parse_double(row[value_col], "value");
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::ingestion, "non-finite value for '" + row[id_col] + "'");
    }
    if (!samples[row[id_col]].emplace(ts, v).second) {
      throw Error(ErrorCode::ingestion, "duplicate timestamp " + row[ts_col] + " for '" +
                                            row[id_col] + "'");
    }
  }
  if (samples.empty()) {
    throw Error(ErrorCode::ingestion, "no rows for kpi '" + kpi_name + "' in " + path.string());
  }

  IngestResult result;
  for (const auto& [id, by_time] : samples) {
    KpiSeries s;
    s.cell_id = id;
    s.start_epoch_s = by_time.begin()->first;
    std::size_t filled = 0;
    std::int64_t expected = s.start_epoch_s;
    for (const auto& [ts, v] : by_time) {
      if ((ts - s.start_epoch_s) % sample_interval_s != 0) {
        throw Error(ErrorCode::ingestion, "series '" + id + "' is off the 15-minute grid at " +
                                              util::format_iso8601(ts));
      }
      const std::int64_t missing = (ts - expected) / sample_interval_s;
      if (missing > 0) {
        if (missing > max_fill) {
          throw Error(ErrorCode::ingestion, "series '" + id + "' has a gap of " +
                                                std::to_string(missing) + " samples before " +
                                                util::format_iso8601(ts));
        }
        for (std::int64_t g = 0; g < missing; ++g) s.values.push_back(s.values.back());
        filled += static_cast<std::size_t>(missing);
      }
      s.values.push_back(v);
      expected = ts + sample_interval_s;
    }
    result.filled_samples[id] = filled;
    result.series.emplace(id, std::move(s));
  }
  return result;
}

void write_kpi_csv(const std::filesystem::path& path, const std::string& kpi_name,
                   const std::vector<KpiSeries>& series) {
  std::ostringstream out;
  out.precision(17);
  out << "cell_id,timestamp,kpi_name,value\n";
  for (const auto& s : series) {
    const auto id = util::csv_escape(s.cell_id);
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << id << ',' << util::format_iso8601(s.timestamp(i)) << ',' << kpi_name << ','
          << s.values[i] << '\n';
    }
  }
  util::write_text_atomic(path, out.str());
}

}  // namespace geokpi::kpi
