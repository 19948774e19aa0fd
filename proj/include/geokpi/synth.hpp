#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "geokpi/geometry.hpp"
#include "geokpi/kpi.hpp"
#include "geokpi/raster.hpp"

namespace geokpi::synth {

inline constexpr int samples_per_day = 96;

struct Archetype {
  std::string name;
  /// Land-cover texture the cells of this archetype sit on.
  std::string texture;
  /// One day at 15-minute resolution, values in [0.05, 0.95].
  std::vector<double> diurnal_template;
  double noise_std = 0.02;
};

struct ScenarioSpec {
  std::vector<Archetype> archetypes;
  int cells_per_archetype = 20;
  int days = 30;
  std::uint64_t seed = 1;

  // Placement. Cells sit on a grid inside their archetype's strip of land.
  geometry::LatLon origin{0.5, 10.0};  ///< north-west corner of the tile
  double resolution_m = 10.0;
  double cell_range_m = 250.0;
  int slot_px = 60;  ///< grid spacing between sites
  std::string season_tag = "spring";
  std::int64_t start_epoch_s = 1709251200;  ///< 2024-03-01T00:00:00Z
};

/// Traffic-shaped templates: residential (morning ramp, evening peak),
/// industrial (midday plateau), forest (low, one broad afternoon hump).
std::vector<double> residential_template();
std::vector<double> industrial_template();
std::vector<double> forest_template();

/// Three archetypes using the templates above with the given noise.
ScenarioSpec default_scenario(std::uint64_t seed = 1, double noise_std = 0.02);

/// Throws validation errors for invalid templates, noise or names and
/// oracle_useless for fewer than two archetypes.
void validate(const ScenarioSpec& spec);

struct Scenario {
  std::vector<geometry::CellConfig> cells;
  raster::LandCoverLayout layout;
  raster::RasterTile tile;
  std::vector<kpi::KpiSeries> series;  ///< raw, one per cell, same order as `cells`
  /// Ground truth; never part of the pipeline inputs.
  std::map<std::string, std::string> labels;
  std::map<std::string, int> label_index;
};

Scenario generate_scenario(const ScenarioSpec& spec);

/// Centre of the archetype's land strip; a site there sees pure texture.
geometry::LatLon region_center(const Scenario& scenario, const std::string& archetype);

struct ScenarioFiles {
  std::filesystem::path cells_csv;
  std::filesystem::path raster_manifest;
  std::filesystem::path kpi_csv;
  std::filesystem::path labels_csv;
};

/// Writes inputs in the ingester formats under `dir`; labels go to a
/// separate `truth/` subdirectory.
ScenarioFiles write_scenario(const Scenario& scenario, const std::filesystem::path& dir,
                             const std::string& kpi_name = "prb_utilization");

std::map<std::string, std::string> read_labels(const std::filesystem::path& labels_csv);

}  // namespace geokpi::synth
