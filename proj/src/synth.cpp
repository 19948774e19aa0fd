#include "geokpi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "geokpi/errors.hpp"
#include "geokpi/util.hpp"

namespace geokpi::synth {

namespace {

double bump(double h, double centre, double width) {
  const double d = (h - centre) / width;
  return std::exp(-0.5 * d * d);
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename F>
std::vector<double> tabulate(F f) {
  std::vector<double> t(samples_per_day);
  for (int i = 0; i < samples_per_day; ++i) t[i] = f(i / 4.0);
  return t;
}

std::string cell_name(int i) {
  std::ostringstream s;
  s << "cell_";
  s.width(4);
  s.fill('0');
  s << i;
  return s.str();
}

}  // namespace

std::vector<double> residential_template() {
  return tabulate([](double h) {
    return 0.12 + 0.3 * bump(h, 8.0, 1.5) + 0.2 * bump(h, 13.0, 2.0) + 0.6 * bump(h, 20.5, 2.2);
  });
}

std::vector<double> industrial_template() {
  return tabulate(
      [](double h) { return 0.1 + 0.75 * logistic((h - 8.0) / 0.6) * logistic((17.5 - h) / 0.6); });
}

std::vector<double> forest_template() {
  return tabulate([](double h) { return 0.08 + 0.35 * bump(h, 14.0, 3.5); });
}

ScenarioSpec default_scenario(std::uint64_t seed, double noise_std) {
  ScenarioSpec spec;
  spec.seed = seed;
  spec.archetypes = {
      {"residential", "residential", residential_template(), noise_std},
      {"industrial", "industrial", industrial_template(), noise_std},
      {"forest", "forest", forest_template(), noise_std},
  };
  return spec;
}

void validate(const ScenarioSpec& spec) {
  if (spec.archetypes.size() < 2) {
    throw Error(ErrorCode::oracle_useless,
                "a scenario needs at least two archetypes for clustering to be checkable");
  }
  if (spec.cells_per_archetype < 1 || spec.days < 1) {
    throw Error(ErrorCode::validation, "cells_per_archetype and days must be positive");
  }
  std::set<std::string> names;
  for (const auto& a : spec.archetypes) {
    if (!names.insert(a.name).second) {
      throw Error(ErrorCode::validation, "duplicate archetype name '" + a.name + "'");
    }
    if (a.diurnal_template.size() != static_cast<std::size_t>(samples_per_day)) {
      throw Error(ErrorCode::validation, "template of '" + a.name + "' must hold 96 samples");
    }
    for (double v : a.diurnal_template) {
      if (!(v >= 0.05 && v <= 0.95)) {
        throw Error(ErrorCode::validation, "template of '" + a.name + "' leaves [0.05, 0.95]");
      }
    }
    if (!(a.noise_std >= 0.0 && a.noise_std < 0.1)) {
      throw Error(ErrorCode::validation, "noise std of '" + a.name + "' must lie in [0, 0.1)");
    }
    raster::texture_for(a.texture);
  }
  // Sites need the full sector inside their slot.
  if (spec.cell_range_m * std::sqrt(1.25) >= 0.5 * spec.slot_px * spec.resolution_m) {
    throw Error(ErrorCode::validation, "cell range too large for the placement grid");
  }
}

Scenario generate_scenario(const ScenarioSpec& spec) {
  validate(spec);
  const int n_arch = static_cast<int>(spec.archetypes.size());
  const int per = spec.cells_per_archetype;
  const int grid_cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(per))));
  const int grid_rows = (per + grid_cols - 1) / grid_cols;
  const int strip_w = grid_cols * spec.slot_px;

  Scenario sc;
  auto& layout = sc.layout;
  layout.height = grid_rows * spec.slot_px;
  layout.width = n_arch * strip_w;
  layout.resolution_m = spec.resolution_m;
  layout.season_tag = spec.season_tag;
  const double dlat = spec.resolution_m / geometry::earth_radius_m * 180.0 / std::numbers::pi;
  const double mid_lat = spec.origin.lat - 0.5 * layout.height * dlat;
  const double dlon = dlat / std::cos(mid_lat * std::numbers::pi / 180.0);
  layout.transform.c = {spec.origin.lon, dlon, 0.0, spec.origin.lat, 0.0, -dlat};
  for (int a = 0; a < n_arch; ++a) {
    layout.regions.push_back({spec.archetypes[a].texture, 0, a * strip_w, layout.height, strip_w});
  }
  sc.tile = raster::make_synthetic_tile(layout, util::derive_seed(spec.seed, "tile"));

  // Ids are handed out in a shuffled order so they carry no label information.
  const int n_cells = n_arch * per;
  std::vector<int> ids(n_cells);
  for (int i = 0; i < n_cells; ++i) ids[i] = i;
  std::mt19937_64 id_rng(util::derive_seed(spec.seed, "ids"));
  std::shuffle(ids.begin(), ids.end(), id_rng);

  std::mt19937_64 az_rng(util::derive_seed(spec.seed, "azimuth"));
  std::uniform_real_distribution<double> azimuth(0.0, 360.0);
  const std::size_t n_samples = static_cast<std::size_t>(spec.days) * samples_per_day;

  for (int a = 0; a < n_arch; ++a) {
    const auto& arch = spec.archetypes[a];
    for (int j = 0; j < per; ++j) {
      const double row = (j / grid_cols + 0.5) * spec.slot_px;
      const double col = a * strip_w + (j % grid_cols + 0.5) * spec.slot_px;
      const auto site = layout.transform.apply(row, col);
      geometry::CellConfig cell;
      cell.cell_id = cell_name(ids[a * per + j]);
      cell.latitude = site.lat;
      cell.longitude = site.lon;
      cell.azimuth = std::floor(azimuth(az_rng) * 10.0) / 10.0;
      cell.tilt = 4.0;
      cell.range_m = spec.cell_range_m;

      kpi::KpiSeries s;
      s.cell_id = cell.cell_id;
      s.start_epoch_s = spec.start_epoch_s;
      s.values.resize(n_samples);
      std::mt19937_64 rng(util::derive_seed(spec.seed, "kpi/" + cell.cell_id));
      std::normal_distribution<double> noise(0.0, arch.noise_std > 0.0 ? arch.noise_std : 1.0);
      for (std::size_t t = 0; t < n_samples; ++t) {
        double v = arch.diurnal_template[t % samples_per_day];
        if (arch.noise_std > 0.0) v += noise(rng);
        s.values[t] = std::clamp(v, 0.0, 1.0);
      }

      sc.labels[cell.cell_id] = arch.name;
      sc.label_index[cell.cell_id] = a;
      sc.cells.push_back(std::move(cell));
      sc.series.push_back(std::move(s));
    }
  }
  return sc;
}

geometry::LatLon region_center(const Scenario& scenario, const std::string& archetype) {
  const auto& layout = scenario.layout;
  for (const auto& r : layout.regions) {
    if (r.archetype == archetype) {
      return layout.transform.apply(r.row0 + 0.5 * r.rows, r.col0 + 0.5 * r.cols);
    }
  }
  throw Error(ErrorCode::validation, "scenario has no region '" + archetype + "'");
}

ScenarioFiles write_scenario(const Scenario& scenario, const std::filesystem::path& dir,
                             const std::string& kpi_name) {
  namespace fs = std::filesystem;
  ScenarioFiles files{dir / "cells.csv", dir / "rasters" / "manifest.csv", dir / "kpi.csv",
                      dir / "truth" / "labels.csv"};
  fs::create_directories(dir / "rasters");
  fs::create_directories(dir / "truth");
  geometry::write_cells_csv(files.cells_csv, scenario.cells);
  raster::RasterStore::save(files.raster_manifest, {scenario.tile});
  kpi::write_kpi_csv(files.kpi_csv, kpi_name, scenario.series);

  std::ostringstream labels;
  labels << "cell_id,archetype\n";
  for (const auto& [id, name] : scenario.labels) {
    labels << util::csv_escape(id) << ',' << util::csv_escape(name) << '\n';
  }
  util::write_text_atomic(files.labels_csv, labels.str());
  return files;
}

std::map<std::string, std::string> read_labels(const std::filesystem::path& labels_csv) {
  const auto table = util::read_csv(labels_csv);
  const auto id = table.column("cell_id");
  const auto name = table.column("archetype");
  std::map<std::string, std::string> out;
  for (const auto& row : table.rows) out[row[id]] = row[name];
  return out;
}

}  // namespace geokpi::synth
