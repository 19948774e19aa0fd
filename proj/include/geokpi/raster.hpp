#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "geokpi/geometry.hpp"

namespace geokpi::raster {

/// Edge length of every extracted patch; matches the EuroSAT tile size.
inline constexpr int patch_size = 64;

/// Minimum fraction of a bbox that must fall inside a tile.
inline constexpr double min_coverage = 0.99;

/// GDAL-ordered affine transform:
///   lon = c[0] + col * c[1] + row * c[2]
///   lat = c[3] + col * c[4] + row * c[5]
/// where (row, col) are continuous pixel coordinates with (0, 0) at the
/// top-left corner of the top-left pixel.
struct GeoTransform {
  std::array<double, 6> c{0.0, 1.0, 0.0, 0.0, 0.0, -1.0};

  geometry::LatLon apply(double row, double col) const noexcept;
  /// Returns {row, col}. Throws validation error for a singular transform.
  std::array<double, 2> invert(const geometry::LatLon& p) const;
  double determinant() const noexcept { return c[1] * c[5] - c[2] * c[4]; }
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Row-major H x W x 3 RGB raster with georeferencing.
class RasterTile {
public:
  RasterTile() = default;
  RasterTile(int height, int width, GeoTransform transform, double resolution_m,
             std::string season_tag);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const GeoTransform& geo_transform() const noexcept { return transform_; }
  double resolution_m() const noexcept { return resolution_m_; }
  const std::string& season_tag() const noexcept { return season_tag_; }

  std::uint8_t at(int row, int col, int channel) const noexcept {
    return pixels_[(static_cast<std::size_t>(row) * width_ + col) * 3 + channel];
  }
  void set(int row, int col, Rgb v) noexcept;
  Rgb rgb(int row, int col) const noexcept {
    return {at(row, col, 0), at(row, col, 1), at(row, col, 2)};
  }

  std::vector<std::uint8_t>& pixels() noexcept { return pixels_; }
  const std::vector<std::uint8_t>& pixels() const noexcept { return pixels_; }

  /// Axis-aligned geographic extent of the pixel grid.
  geometry::BoundingBox extent() const noexcept;

private:
  int height_ = 0;
  int width_ = 0;
  GeoTransform transform_;
  double resolution_m_ = 0.0;
  std::string season_tag_;
  std::vector<std::uint8_t> pixels_;
};

/// Fixed 64x64 RGB crop of one coverage area.
struct ImagePatch {
  std::vector<std::uint8_t> pixels = std::vector<std::uint8_t>(patch_size * patch_size * 3);
  std::string source_cell_id;
  geometry::BoundingBox source_bbox;
  std::string resampling = "bilinear";

  std::uint8_t at(int row, int col, int channel) const noexcept {
    return pixels[(static_cast<std::size_t>(row) * patch_size + col) * 3 + channel];
  }
};

/// Fraction of `bbox` area (in degree units) that lies inside the tile extent.
double coverage_fraction(const RasterTile& tile, const geometry::BoundingBox& bbox);

/// Crops the bbox of `box` and resamples it to 64x64 with bilinear
/// interpolation. Throws out_of_extent when the bbox misses the tile and
/// insufficient_coverage when less than 99% of it is covered.
ImagePatch extract_patch(const RasterTile& tile, const geometry::CoverageBox& box,
                         std::string cell_id = {});

// --- synthetic land cover ---------------------------------------------------

/// Colour palette and sampling weights rendering one land-cover archetype.
struct Texture {
  std::string name;
  std::vector<Rgb> palette;
  std::vector<double> weights;
};

/// Texture table for the known archetypes (EuroSAT-style class names).
const std::vector<Texture>& texture_table();
const Texture& texture_for(std::string_view archetype);

/// Expected per-channel mean of a texture, from its palette and weights.
std::array<double, 3> texture_mean(const Texture& texture);

struct LandCoverRegion {
  std::string archetype;
  int row0 = 0;
  int col0 = 0;
  int rows = 0;
  int cols = 0;
};

struct LandCoverLayout {
  int height = 0;
  int width = 0;
  GeoTransform transform;
  double resolution_m = 10.0;
  std::string season_tag = "spring";
  std::vector<LandCoverRegion> regions;
};

/// Throws layout_validation for overlapping, gapped, or out-of-bounds regions
/// and for unknown archetypes.
void validate_layout(const LandCoverLayout& layout);

/// Renders a layout deterministically: the same (layout, seed) yields
/// byte-identical pixels.
RasterTile make_synthetic_tile(const LandCoverLayout& layout, std::uint64_t seed);

// --- image files --------------------------------------------------------------

struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  ///< row-major RGB
};

/// Reads binary PPM (P6) or baseline JPEG, chosen by extension.
Image read_image(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, int height, int width,
               const std::vector<std::uint8_t>& rgb);

// --- raster store -------------------------------------------------------------

/// Directory of georeferenced tiles described by a CSV manifest with header
///   path,gt0,gt1,gt2,gt3,gt4,gt5,resolution_m,season_tag
/// Paths are relative to the manifest's directory. All tiles must share one
/// season tag.
class RasterStore {
public:
  static RasterStore load(const std::filesystem::path& manifest);

  /// Writes tiles as PPM files next to the manifest and the manifest itself.
  static void save(const std::filesystem::path& manifest, const std::vector<RasterTile>& tiles);

  /// Copies an image into the store directory and appends a manifest record;
  /// creates the manifest when absent. Rejects a season tag that differs
  /// from the tiles already present.
  static void import_image(const std::filesystem::path& manifest,
                           const std::filesystem::path& image, const GeoTransform& transform,
                           double resolution_m, const std::string& season_tag);

  const std::vector<RasterTile>& tiles() const noexcept { return tiles_; }
  const std::string& season_tag() const noexcept { return season_tag_; }

  /// Extracts from the tile with the greatest coverage of the bbox.
  ImagePatch extract(const geometry::CoverageBox& box, std::string cell_id = {}) const;

private:
  std::vector<RasterTile> tiles_;
  std::string season_tag_;
};

}  // namespace geokpi::raster
