#include "geokpi/raster.hpp"

#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include "geokpi/errors.hpp"
#include "geokpi/util.hpp"

namespace geokpi::raster {

using geometry::BoundingBox;
using geometry::LatLon;

geometry::LatLon GeoTransform::apply(double row, double col) const noexcept {
  return {c[3] + col * c[4] + row * c[5], c[0] + col * c[1] + row * c[2]};
}

std::array<double, 2> GeoTransform::invert(const LatLon& p) const {
  const double det = determinant();
  if (det == 0.0 || !std::isfinite(det)) {
    throw Error(ErrorCode::validation, "geo transform is not invertible");
  }
  const double dx = p.lon - c[0];
  const double dy = p.lat - c[3];
  const double col = (dx * c[5] - dy * c[2]) / det;
  const double row = (dy * c[1] - dx * c[4]) / det;
  return {row, col};
}

RasterTile::RasterTile(int height, int width, GeoTransform transform, double resolution_m,
                       std::string season_tag)
    : height_(height),
      width_(width),
      transform_(transform),
      resolution_m_(resolution_m),
      season_tag_(std::move(season_tag)) {
  if (height < 1 || width < 1) throw Error(ErrorCode::validation, "raster must be at least 1x1");
  if (!(resolution_m > 0.0)) throw Error(ErrorCode::validation, "resolution_m must be positive");
  if (transform.determinant() == 0.0) {
    throw Error(ErrorCode::validation, "geo transform is not invertible");
  }
  pixels_.assign(static_cast<std::size_t>(height) * width * 3, 0);
}

void RasterTile::set(int row, int col, Rgb v) noexcept {
  auto* p = &pixels_[(static_cast<std::size_t>(row) * width_ + col) * 3];
  p[0] = v.r;
  p[1] = v.g;
  p[2] = v.b;
}

BoundingBox RasterTile::extent() const noexcept {
  const std::array<LatLon, 4> corners{
      transform_.apply(0, 0), transform_.apply(0, width_), transform_.apply(height_, 0),
      transform_.apply(height_, width_)};
  BoundingBox bb{corners[0].lat, corners[0].lat, corners[0].lon, corners[0].lon};
  for (const auto& c : corners) {
    bb.lat_min = std::min(bb.lat_min, c.lat);
    bb.lat_max = std::max(bb.lat_max, c.lat);
    bb.lon_min = std::min(bb.lon_min, c.lon);
    bb.lon_max = std::max(bb.lon_max, c.lon);
  }
  return bb;
}

double coverage_fraction(const RasterTile& tile, const BoundingBox& bbox) {
  const double area = bbox.height() * bbox.width();
  if (!(area > 0.0)) throw Error(ErrorCode::degenerate_geometry, "bbox has zero area");
  const auto ext = tile.extent();
  const double h = std::min(bbox.lat_max, ext.lat_max) - std::max(bbox.lat_min, ext.lat_min);
  const double w = std::min(bbox.lon_max, ext.lon_max) - std::max(bbox.lon_min, ext.lon_min);
  if (h <= 0.0 || w <= 0.0) return 0.0;
  return (h * w) / area;
}

ImagePatch extract_patch(const RasterTile& tile, const geometry::CoverageBox& box,
                         std::string cell_id) {
  const auto& bb = box.bbox;
  const double covered = coverage_fraction(tile, bb);
  if (covered <= 0.0) {
    throw Error(ErrorCode::out_of_extent, "coverage box of '" + cell_id + "' lies outside the tile");
  }
  if (covered < min_coverage) {
    std::ostringstream msg;
    msg << "coverage box of '" << cell_id << "' is missing " << (1.0 - covered) * 100.0
        << "% of its area";
    throw Error(ErrorCode::insufficient_coverage, msg.str());
  }

  ImagePatch patch;
  patch.source_cell_id = std::move(cell_id);
  patch.source_bbox = bb;

  const int h = tile.height();
  const int w = tile.width();
  const auto& gt = tile.geo_transform();
  for (int i = 0; i < patch_size; ++i) {
    const double lat = bb.lat_max - (i + 0.5) / patch_size * bb.height();
    for (int j = 0; j < patch_size; ++j) {
      const double lon = bb.lon_min + (j + 0.5) / patch_size * bb.width();
      const auto [row_f, col_f] = gt.invert({lat, lon});
      // sample positions relative to pixel centres
      const double y = row_f - 0.5;
      const double x = col_f - 0.5;
      const double y0f = std::floor(y);
      const double x0f = std::floor(x);
      const double fy = y - y0f;
      const double fx = x - x0f;
      const int y0 = std::clamp(static_cast<int>(y0f), 0, h - 1);
      const int y1 = std::clamp(static_cast<int>(y0f) + 1, 0, h - 1);
      const int x0 = std::clamp(static_cast<int>(x0f), 0, w - 1);
      const int x1 = std::clamp(static_cast<int>(x0f) + 1, 0, w - 1);
      for (int ch = 0; ch < 3; ++ch) {
        const double top = (1 - fx) * tile.at(y0, x0, ch) + fx * tile.at(y0, x1, ch);
        const double bottom = (1 - fx) * tile.at(y1, x0, ch) + fx * tile.at(y1, x1, ch);
        const double v = (1 - fy) * top + fy * bottom;
        patch.pixels[(static_cast<std::size_t>(i) * patch_size + j) * 3 + ch] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return patch;
}

// --- synthetic land cover ---------------------------------------------------

const std::vector<Texture>& texture_table() {
  static const std::vector<Texture> table{
      {"annual_crop", {{190, 170, 90}, {150, 160, 70}, {120, 100, 60}}, {0.5, 0.3, 0.2}},
      {"forest", {{30, 70, 35}, {45, 90, 40}, {20, 50, 25}}, {0.5, 0.3, 0.2}},
      {"herbaceous_vegetation", {{110, 140, 60}, {140, 150, 80}}, {0.6, 0.4}},
      {"highway", {{130, 130, 130}, {80, 80, 85}, {90, 120, 70}}, {0.5, 0.2, 0.3}},
      {"industrial",
       {{220, 220, 225}, {150, 150, 155}, {100, 100, 110}, {180, 90, 60}},
       {0.4, 0.3, 0.2, 0.1}},
      {"pasture", {{120, 170, 80}, {100, 150, 70}}, {0.7, 0.3}},
      {"permanent_crop", {{140, 130, 70}, {80, 110, 50}}, {0.5, 0.5}},
      {"residential",
       {{190, 100, 80}, {150, 150, 140}, {80, 130, 70}, {50, 80, 45}},
       {0.3, 0.2, 0.3, 0.2}},
      {"river", {{40, 70, 120}, {60, 90, 80}}, {0.6, 0.4}},
      {"sea_lake", {{20, 40, 90}, {30, 60, 110}}, {0.7, 0.3}},
  };
  return table;
}

const Texture& texture_for(std::string_view archetype) {
  for (const auto& t : texture_table()) {
    if (t.name == archetype) return t;
  }
  throw Error(ErrorCode::layout_validation, "unknown land-cover archetype '" +
                                                std::string(archetype) + "'");
}

std::array<double, 3> texture_mean(const Texture& texture) {
  std::array<double, 3> mean{};
  double total = 0.0;
  for (std::size_t i = 0; i < texture.palette.size(); ++i) {
    const double w = texture.weights[i];
    mean[0] += w * texture.palette[i].r;
    mean[1] += w * texture.palette[i].g;
    mean[2] += w * texture.palette[i].b;
    total += w;
  }
  for (auto& m : mean) m /= total;
  return mean;
}

void validate_layout(const LandCoverLayout& layout) {
  if (layout.height < 1 || layout.width < 1) {
    throw Error(ErrorCode::layout_validation, "layout must be at least 1x1");
  }
  std::vector<int> owner(static_cast<std::size_t>(layout.height) * layout.width, -1);
  for (std::size_t k = 0; k < layout.regions.size(); ++k) {
    const auto& r = layout.regions[k];
    texture_for(r.archetype);
    if (r.rows < 1 || r.cols < 1 || r.row0 < 0 || r.col0 < 0 ||
        r.row0 + r.rows > layout.height || r.col0 + r.cols > layout.width) {
      throw Error(ErrorCode::layout_validation,
                  "region " + std::to_string(k) + " exceeds the layout bounds");
    }
    for (int row = r.row0; row < r.row0 + r.rows; ++row) {
      for (int col = r.col0; col < r.col0 + r.cols; ++col) {
        auto& o = owner[static_cast<std::size_t>(row) * layout.width + col];
        if (o != -1) {
          throw Error(ErrorCode::layout_validation, "regions " + std::to_string(o) + " and " +
                                                        std::to_string(k) + " overlap");
        }
        o = static_cast<int>(k);
      }
    }
  }
  if (std::find(owner.begin(), owner.end(), -1) != owner.end()) {
    throw Error(ErrorCode::layout_validation, "regions leave part of the extent uncovered");
  }
}

RasterTile make_synthetic_tile(const LandCoverLayout& layout, std::uint64_t seed) {
  validate_layout(layout);
  RasterTile tile(layout.height, layout.width, layout.transform, layout.resolution_m,
                  layout.season_tag);
  for (std::size_t k = 0; k < layout.regions.size(); ++k) {
    const auto& region = layout.regions[k];
    const auto& texture = texture_for(region.archetype);
    std::mt19937_64 rng(util::derive_seed(seed, "region/" + std::to_string(k)));
    std::discrete_distribution<std::size_t> pick(texture.weights.begin(), texture.weights.end());
    for (int row = region.row0; row < region.row0 + region.rows; ++row) {
      for (int col = region.col0; col < region.col0 + region.cols; ++col) {
        tile.set(row, col, texture.palette[pick(rng)]);
      }
    }
  }
  return tile;
}

// --- image files --------------------------------------------------------------

namespace {

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  auto next_token = [&]() {
    std::string tok;
    while (tok.empty()) {
      int ch = in.get();
      if (ch == EOF) break;
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(ch)) continue;
      tok += static_cast<char>(ch);
      while ((ch = in.peek()) != EOF && !std::isspace(ch)) tok += static_cast<char>(in.get());
    }
    return tok;
  };
  if (next_token() != "P6") throw Error(ErrorCode::io, path.string() + ": not a binary PPM");
  Image img;
  img.width = std::stoi(next_token());
  img.height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255 || img.width < 1 || img.height < 1) {
    throw Error(ErrorCode::io, path.string() + ": unsupported PPM header");
  }
  in.get();  // single whitespace after maxval
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw Error(ErrorCode::io, path.string() + ": truncated PPM");
  }
  return img;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<FILE, decltype(&std::fclose)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");

  jpeg_decompress_struct cinfo{};
  JpegErrorManager jerr{};
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  Image img;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::io, path.string() + ": JPEG decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ppm") return read_ppm(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  throw Error(ErrorCode::io, path.string() + ": unsupported image format '" + ext + "'");
}

void write_ppm(const std::filesystem::path& path, int height, int width,
               const std::vector<std::uint8_t>& rgb) {
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  util::write_text_atomic(path, out);
}

// --- raster store -------------------------------------------------------------

namespace {

constexpr std::string_view manifest_header =
    "path,gt0,gt1,gt2,gt3,gt4,gt5,resolution_m,season_tag";

std::string manifest_record(const std::string& file, const GeoTransform& gt, double resolution,
                            const std::string& season) {
  std::ostringstream out;
  out.precision(17);
  out << util::csv_escape(file);
  for (double v : gt.c) out << ',' << v;
  out << ',' << resolution << ',' << util::csv_escape(season) << '\n';
  return out.str();
}

}  // namespace

RasterStore RasterStore::load(const std::filesystem::path& manifest) {
  if (!std::filesystem::exists(manifest)) {
    throw Error(ErrorCode::io, "raster manifest not found: '" + manifest.string() + "'");
  }
  const auto table = util::read_csv(manifest);
  const auto dir = manifest.parent_path();
  RasterStore store;
  const auto path_col = table.column("path");
  const auto res_col = table.column("resolution_m");
  const auto season_col = table.column("season_tag");
  std::array<std::size_t, 6> gt_cols{};
  for (int i = 0; i < 6; ++i) gt_cols[i] = table.column("gt" + std::to_string(i));

  for (const auto& row : table.rows) {
    GeoTransform gt;
    for (int i = 0; i < 6; ++i) gt.c[i] = util::parse_double(row[gt_cols[i]], "geo transform");
    const double res = util::parse_double(row[res_col], "resolution_m");
    const auto& season = row[season_col];
    if (store.tiles_.empty()) {
      store.season_tag_ = season;
    } else if (season != store.season_tag_) {
      throw Error(ErrorCode::season_mismatch, "tile '" + row[path_col] + "' has season '" +
                                                  season + "' but the store holds '" +
                                                  store.season_tag_ + "'");
    }
    const auto img = read_image(dir / row[path_col]);
    RasterTile tile(img.height, img.width, gt, res, season);
    tile.pixels() = img.pixels;
    store.tiles_.push_back(std::move(tile));
  }
  if (store.tiles_.empty()) {
    throw Error(ErrorCode::ingestion, "raster manifest '" + manifest.string() + "' lists no tiles");
  }
  return store;
}

void RasterStore::save(const std::filesystem::path& manifest, const std::vector<RasterTile>& tiles) {
  const auto dir = manifest.parent_path();
  std::string text(manifest_header);
  text += '\n';
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& t = tiles[i];
    if (t.season_tag() != tiles.front().season_tag()) {
      throw Error(ErrorCode::season_mismatch, "tiles carry different season tags");
    }
    const std::string file = "tile_" + std::to_string(i) + ".ppm";
    write_ppm(dir / file, t.height(), t.width(), t.pixels());
    text += manifest_record(file, t.geo_transform(), t.resolution_m(), t.season_tag());
  }
  util::write_text_atomic(manifest, text);
}

void RasterStore::import_image(const std::filesystem::path& manifest,
                               const std::filesystem::path& image, const GeoTransform& transform,
                               double resolution_m, const std::string& season_tag) {
  std::string text;
  std::size_t existing = 0;
  if (std::filesystem::exists(manifest)) {
    const auto table = util::read_csv(manifest);
    const auto season_col = table.column("season_tag");
    for (const auto& row : table.rows) {
      if (row[season_col] != season_tag) {
        throw Error(ErrorCode::season_mismatch, "store holds season '" + row[season_col] +
                                                    "', refusing '" + season_tag + "'");
      }
    }
    existing = table.rows.size();
    text = util::read_text(manifest);
    if (!text.empty() && text.back() != '\n') text += '\n';
  } else {
    text = std::string(manifest_header) + "\n";
  }
  const auto img = read_image(image);
  // validates dimensions and the transform
  RasterTile probe(img.height, img.width, transform, resolution_m, season_tag);
  const std::string file = "tile_" + std::to_string(existing) + ".ppm";
  write_ppm(manifest.parent_path() / file, img.height, img.width, img.pixels);
  text += manifest_record(file, transform, resolution_m, season_tag);
  util::write_text_atomic(manifest, text);
}

ImagePatch RasterStore::extract(const geometry::CoverageBox& box, std::string cell_id) const {
  const RasterTile* best = nullptr;
  double best_cov = 0.0;
  for (const auto& t : tiles_) {
    const double cov = coverage_fraction(t, box.bbox);
    if (cov > best_cov) {
      best_cov = cov;
      best = &t;
    }
  }
  if (best == nullptr) {
    throw Error(ErrorCode::out_of_extent,
                "coverage box of '" + cell_id + "' lies outside every raster tile");
  }
  return extract_patch(*best, box, std::move(cell_id));
}

}  // namespace geokpi::raster
