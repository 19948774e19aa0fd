#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace geokpi::geometry {

/// Mean Earth radius of the spherical model, meters.
inline constexpr double earth_radius_m = 6'371'000.0;

/// Sites closer to a pole than this are rejected.
inline constexpr double max_abs_latitude = 89.9;

struct LatLon {
  double lat = 0.0;  ///< degrees
  double lon = 0.0;  ///< degrees

  bool operator==(const LatLon&) const = default;
};

/// Antenna configuration of a single cell. Tilt is carried for completeness
/// but has no effect on the footprint.
struct CellConfig {
  std::string cell_id;
  double latitude = 0.0;
  double longitude = 0.0;
  double azimuth = 0.0;
  double tilt = 0.0;
  double range_m = 0.0;
};

struct BoundingBox {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;

  double height() const noexcept { return lat_max - lat_min; }
  double width() const noexcept { return lon_max - lon_min; }
  bool contains(const LatLon& p) const noexcept {
    return p.lat >= lat_min && p.lat <= lat_max && p.lon >= lon_min && p.lon <= lon_max;
  }
};

/// Rectangle approximating a cell's sector.
///
/// Corner order: near-left, near-right, far-right, far-left, where "left" is
/// the side at azimuth - 90 degrees as seen from the site looking along the
/// beam. The apex (the site) is the midpoint of the near edge.
struct CoverageBox {
  std::array<LatLon, 4> corners;
  LatLon apex;
  BoundingBox bbox;
};

/// Maps any finite bearing into [0, 360).
double normalize_azimuth(double degrees);

/// Great-circle destination from `origin` after travelling `distance_m`
/// along initial bearing `bearing_deg`.
LatLon destination(const LatLon& origin, double bearing_deg, double distance_m);

/// Haversine great-circle distance in meters.
double distance_m(const LatLon& a, const LatLon& b);

/// Throws validation / degenerate_geometry / polar_unsupported errors.
void validate(const CellConfig& cell);

/// Rectangle of length `range_m` along the azimuth, width
/// `width_ratio * range_m` centred on the beam axis.
CoverageBox sector_box(const CellConfig& cell, double width_ratio = 1.0);

/// Header: cell_id, latitude, longitude, azimuth, tilt, range_m.
std::vector<CellConfig> read_cells_csv(const std::filesystem::path& path);
void write_cells_csv(const std::filesystem::path& path, const std::vector<CellConfig>& cells);

}  // namespace geokpi::geometry
