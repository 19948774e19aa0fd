#include "geokpi/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "geokpi/errors.hpp"
#include "geokpi/util.hpp"

namespace geokpi::geometry {

namespace {

constexpr double deg2rad = std::numbers::pi / 180.0;
constexpr double rad2deg = 180.0 / std::numbers::pi;

double wrap_longitude(double lon) {
  lon = std::fmod(lon + 180.0, 360.0);
  if (lon < 0) lon += 360.0;
  return lon - 180.0;
}

}  // namespace

double normalize_azimuth(double degrees) {
  if (!std::isfinite(degrees)) {
    throw Error(ErrorCode::validation, "azimuth must be finite");
  }
  double r = std::fmod(degrees, 360.0);
  if (r < 0) r += 360.0;
  // -tiny + 360 rounds to 360
  if (r >= 360.0) r = 0.0;
  return r;
}

LatLon destination(const LatLon& origin, double bearing_deg, double distance) {
  const double phi1 = origin.lat * deg2rad;
  const double lambda1 = origin.lon * deg2rad;
  const double theta = bearing_deg * deg2rad;
  const double delta = distance / earth_radius_m;

  const double sin_phi2 =
      std::sin(phi1) * std::cos(delta) + std::cos(phi1) * std::sin(delta) * std::cos(theta);
  const double phi2 = std::asin(std::clamp(sin_phi2, -1.0, 1.0));
  const double y = std::sin(theta) * std::sin(delta) * std::cos(phi1);
  const double x = std::cos(delta) - std::sin(phi1) * sin_phi2;
  const double lambda2 = lambda1 + std::atan2(y, x);
  return {phi2 * rad2deg, wrap_longitude(lambda2 * rad2deg)};
}

double distance_m(const LatLon& a, const LatLon& b) {
  const double dphi = (b.lat - a.lat) * deg2rad;
  const double dlambda = (b.lon - a.lon) * deg2rad;
  const double h = std::sin(dphi / 2) * std::sin(dphi / 2) +
                   std::cos(a.lat * deg2rad) * std::cos(b.lat * deg2rad) *
                       std::sin(dlambda / 2) * std::sin(dlambda / 2);
  return 2.0 * earth_radius_m * std::asin(std::min(1.0, std::sqrt(h)));
}

void validate(const CellConfig& cell) {
  if (!std::isfinite(cell.latitude) || !std::isfinite(cell.longitude) ||
      !std::isfinite(cell.azimuth) || !std::isfinite(cell.range_m)) {
    throw Error(ErrorCode::validation, "cell '" + cell.cell_id + "' has non-finite fields");
  }
  if (cell.latitude < -90.0 || cell.latitude > 90.0 || cell.longitude < -180.0 ||
      cell.longitude > 180.0) {
    throw Error(ErrorCode::validation, "cell '" + cell.cell_id + "' position out of bounds");
  }
  if (cell.range_m <= 0.0) {
    throw Error(ErrorCode::degenerate_geometry,
                "cell '" + cell.cell_id + "' has non-positive range");
  }
  if (std::abs(cell.latitude) > max_abs_latitude) {
    throw Error(ErrorCode::polar_unsupported,
                "cell '" + cell.cell_id + "' is too close to a pole");
  }
}

CoverageBox sector_box(const CellConfig& cell, double width_ratio) {
  validate(cell);
  if (!(width_ratio > 0.0 && width_ratio <= 2.0)) {
    throw Error(ErrorCode::validation, "width_ratio must lie in (0, 2]");
  }
  const double azimuth = normalize_azimuth(cell.azimuth);
  const double half_width = 0.5 * width_ratio * cell.range_m;
  const LatLon site{cell.latitude, cell.longitude};
  const LatLon far_mid = destination(site, azimuth, cell.range_m);

  CoverageBox box;
  box.apex = site;
  box.corners[0] = destination(site, azimuth - 90.0, half_width);
  box.corners[1] = destination(site, azimuth + 90.0, half_width);
  box.corners[2] = destination(far_mid, azimuth + 90.0, half_width);
  box.corners[3] = destination(far_mid, azimuth - 90.0, half_width);

  auto& bb = box.bbox;
  bb.lat_min = bb.lat_max = box.corners[0].lat;
  bb.lon_min = bb.lon_max = box.corners[0].lon;
  for (const auto& c : box.corners) {
    bb.lat_min = std::min(bb.lat_min, c.lat);
    bb.lat_max = std::max(bb.lat_max, c.lat);
    bb.lon_min = std::min(bb.lon_min, c.lon);
    bb.lon_max = std::max(bb.lon_max, c.lon);
  }
  return box;
}

std::vector<CellConfig> read_cells_csv(const std::filesystem::path& path) {
  const auto table = util::read_csv(path);
  const auto id = table.column("cell_id");
  const auto lat = table.column("latitude");
  const auto lon = table.column("longitude");
  const auto az = table.column("azimuth");
  const auto tilt = table.column("tilt");
  const auto range = table.column("range_m");

  std::vector<CellConfig> cells;
  std::set<std::string> seen;
  for (const auto& row : table.rows) {
    CellConfig c;
    c.cell_id = row[id];
    if (c.cell_id.empty()) throw Error(ErrorCode::ingestion, "empty cell_id");
    if (!seen.insert(c.cell_id).second) {
      throw Error(ErrorCode::ingestion, "duplicate cell_id '" + c.cell_id + "'");
    }
    c.latitude = util::parse_double(row[lat], "latitude");
    c.longitude = util::parse_double(row[lon], "longitude");
    c.azimuth = normalize_azimuth(util::parse_double(row[az], "azimuth"));
    c.tilt = util::parse_double(row[tilt], "tilt");
    c.range_m = util::parse_double(row[range], "range_m");
    validate(c);
    cells.push_back(std::move(c));
  }
  return cells;
}

void write_cells_csv(const std::filesystem::path& path, const std::vector<CellConfig>& cells) {
  std::ostringstream out;
  out.precision(17);
  out << "cell_id,latitude,longitude,azimuth,tilt,range_m\n";
  for (const auto& c : cells) {
    out << util::csv_escape(c.cell_id) << ',' << c.latitude << ',' << c.longitude << ','
        << c.azimuth << ',' << c.tilt << ',' << c.range_m << '\n';
  }
  util::write_text_atomic(path, out.str());
}

}  // namespace geokpi::geometry
