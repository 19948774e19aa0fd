#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "geokpi/errors.hpp"
#include "geokpi/raster.hpp"
#include "support.hpp"

using namespace geokpi;
using namespace geokpi::raster;
using geometry::BoundingBox;
using geometry::CoverageBox;
using testsupport::error_of;

namespace {

// lon = 0.01 * col, lat = -0.01 * row
GeoTransform hundredth() { return GeoTransform{{0.0, 0.01, 0.0, 0.0, 0.0, -0.01}}; }

CoverageBox box_of(BoundingBox bb) {
  CoverageBox b;
  b.bbox = bb;
  b.apex = {(bb.lat_min + bb.lat_max) / 2, (bb.lon_min + bb.lon_max) / 2};
  return b;
}

// Source pixels [r0, r1) x [c0, c1) of the hundredth() grid.
BoundingBox pixel_box(double r0, double r1, double c0, double c1) {
  return {-0.01 * r1, -0.01 * r0, 0.01 * c0, 0.01 * c1};
}

RasterTile constant_tile(Rgb v, int h = 32, int w = 32) {
  RasterTile t(h, w, hundredth(), 10.0, "spring");
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) t.set(r, c, v);
  return t;
}

LandCoverLayout strips(std::vector<std::string> names, int rows = 30, int cols_each = 20) {
  LandCoverLayout l;
  l.height = rows;
  l.width = cols_each * static_cast<int>(names.size());
  l.transform = hundredth();
  for (std::size_t i = 0; i < names.size(); ++i) {
    l.regions.push_back({names[i], 0, static_cast<int>(i) * cols_each, rows, cols_each});
  }
  return l;
}

}  // namespace

TEST(ExtractPatch, ConstantTileGivesConstantPatch) {
  const auto tile = constant_tile({120, 130, 140});
  for (auto bb : {pixel_box(0, 32, 0, 32), pixel_box(3.3, 9.7, 10.1, 27.9), pixel_box(31, 32, 0, 1)}) {
    const auto p = extract_patch(tile, box_of(bb), "x");
    for (int r = 0; r < patch_size; ++r) {
      for (int c = 0; c < patch_size; ++c) {
        ASSERT_EQ(p.at(r, c, 0), 120);
        ASSERT_EQ(p.at(r, c, 1), 130);
        ASSERT_EQ(p.at(r, c, 2), 140);
      }
    }
    EXPECT_EQ(p.source_cell_id, "x");
    EXPECT_EQ(p.resampling, "bilinear");
    EXPECT_EQ(p.source_bbox.lat_min, bb.lat_min);
  }
}

TEST(ExtractPatch, CheckerboardMatchesHandMapping) {
  // 16x16 tile of 2x2 blocks: 200 where (row/2 + col/2) is even, else 40.
  RasterTile tile(16, 16, hundredth(), 10.0, "spring");
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      const std::uint8_t v = ((r / 2 + c / 2) % 2 == 0) ? 200 : 40;
      tile.set(r, c, {v, v, v});
    }
  }
  // bbox = source pixels [0, 8) x [0, 8): 8 patch pixels per source pixel.
  // Patch pixel i samples source row (i + 0.5) / 8 - 0.5 (relative to
  // pixel centres); same for columns. Values worked out by hand:
  //   (16, 7): rows 1|2 at fy = 0.5625, cols 0|1 -> 0.4375*200 + 0.5625*40
  //   (12,12): rows 1|2 and cols 1|2 at 0.0625 -> 181.25
  struct Sample {
    int i, j, v;
  };
  const Sample table[16] = {
      {0, 0, 200},   {7, 7, 200},    {7, 23, 40},   {23, 7, 40},   {23, 23, 200},  {16, 7, 110},
      {7, 16, 110},  {16, 16, 121},  {12, 12, 181}, {19, 3, 50},   {40, 40, 200},  {63, 63, 121},
      {63, 0, 110},  {0, 63, 110},   {31, 47, 119}, {48, 20, 130},
  };
  const auto p = extract_patch(tile, box_of(pixel_box(0, 8, 0, 8)));
  for (const auto& s : table) {
    for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(p.at(s.i, s.j, ch), s.v) << s.i << "," << s.j;
  }
}

TEST(ExtractPatch, ExtentErrors) {
  const auto tile = constant_tile({1, 2, 3});
  // Fully west of lon 0.
  EXPECT_EQ(error_of([&] { extract_patch(tile, box_of({-0.1, -0.05, -0.3, -0.2})); }),
            ErrorCode::out_of_extent);
  // Half outside.
  EXPECT_EQ(error_of([&] { extract_patch(tile, box_of(pixel_box(0, 10, 27, 37))); }),
            ErrorCode::insufficient_coverage);
  try {
    extract_patch(tile, box_of(pixel_box(0, 10, 27, 37)), "c7");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("50"), std::string::npos) << e.what();
  }
  // 99.5% covered is enough.
  EXPECT_NO_THROW(extract_patch(tile, box_of(pixel_box(0, 10, 22.05, 32.05))));
}

TEST(ExtractPatch, DeterministicAndWithinSourceRange) {
  LandCoverLayout l = strips({"forest", "industrial"});
  const auto tile = make_synthetic_tile(l, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const double r0 = u(rng) * 20, c0 = u(rng) * 30;
    const double r1 = r0 + 1 + u(rng) * 9, c1 = c0 + 1 + u(rng) * 9;
    const auto box = box_of(pixel_box(r0, r1, c0, c1));
    const auto a = extract_patch(tile, box), b = extract_patch(tile, box);
    ASSERT_EQ(a.pixels, b.pixels);
    // Bilinear sampling only touches pixels within one pixel of the box.
    for (int ch = 0; ch < 3; ++ch) {
      int lo = 255, hi = 0;
      for (int r = std::max(0, int(r0) - 1); r <= std::min(29, int(r1) + 1); ++r) {
        for (int c = std::max(0, int(c0) - 1); c <= std::min(39, int(c1) + 1); ++c) {
          lo = std::min<int>(lo, tile.at(r, c, ch));
          hi = std::max<int>(hi, tile.at(r, c, ch));
        }
      }
      for (int r = 0; r < patch_size; ++r) {
        for (int c = 0; c < patch_size; ++c) {
          ASSERT_GE(a.at(r, c, ch), lo);
          ASSERT_LE(a.at(r, c, ch), hi);
        }
      }
    }
  }
}

TEST(ExtractPatch, ShrinkingIntoConstantRegionGivesConstantPatch) {
  RasterTile tile = constant_tile({10, 20, 30});
  for (int r = 8; r < 24; ++r)
    for (int c = 8; c < 24; ++c) tile.set(r, c, {200, 100, 50});
  // Stay half a pixel inside the region so bilinear never reaches outside.
  for (double m : {0.5, 2.0, 5.0}) {
    const auto p = extract_patch(tile, box_of(pixel_box(8 + m, 24 - m, 8 + m, 24 - m)));
    for (std::size_t i = 0; i < p.pixels.size(); i += 3) {
      ASSERT_EQ(p.pixels[i], 200);
      ASSERT_EQ(p.pixels[i + 1], 100);
      ASSERT_EQ(p.pixels[i + 2], 50);
    }
  }
}

TEST(SyntheticTile, SameSeedIsByteIdentical) {
  const auto l = strips({"forest", "residential"});
  EXPECT_EQ(make_synthetic_tile(l, 7).pixels(), make_synthetic_tile(l, 7).pixels());
  EXPECT_NE(make_synthetic_tile(l, 7).pixels(), make_synthetic_tile(l, 8).pixels());
}

TEST(SyntheticTile, ForestPixelsComeFromForestPalette) {
  const auto tile = make_synthetic_tile(strips({"forest"}), 1);
  const auto& pal = texture_for("forest").palette;
  std::set<std::array<int, 3>> seen;
  for (int r = 0; r < tile.height(); ++r) {
    for (int c = 0; c < tile.width(); ++c) {
      const auto v = tile.rgb(r, c);
      ASSERT_NE(std::find(pal.begin(), pal.end(), v), pal.end());
      seen.insert({v.r, v.g, v.b});
    }
  }
  EXPECT_EQ(seen.size(), pal.size());
}

TEST(SyntheticTile, RegionMeansSeparatedBy40) {
  const std::vector<std::string> names{"residential", "industrial", "forest"};
  // Palette means from the texture table, weighted by hand.
  const std::array<double, 3> expected[3] = {
      {0.3 * 190 + 0.2 * 150 + 0.3 * 80 + 0.2 * 50, 0.3 * 100 + 0.2 * 150 + 0.3 * 130 + 0.2 * 80,
       0.3 * 80 + 0.2 * 140 + 0.3 * 70 + 0.2 * 45},
      {0.4 * 220 + 0.3 * 150 + 0.2 * 100 + 0.1 * 180, 0.4 * 220 + 0.3 * 150 + 0.2 * 100 + 0.1 * 90,
       0.4 * 225 + 0.3 * 155 + 0.2 * 110 + 0.1 * 60},
      {0.5 * 30 + 0.3 * 45 + 0.2 * 20, 0.5 * 70 + 0.3 * 90 + 0.2 * 50, 0.5 * 35 + 0.3 * 40 + 0.2 * 25},
  };
  for (int i = 0; i < 3; ++i) {
    const auto m = texture_mean(texture_for(names[i]));
    for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(m[ch], expected[i][ch], 1e-9);
  }
  const auto tile = make_synthetic_tile(strips(names, 60, 60), 11);
  std::array<std::array<double, 3>, 3> measured{};
  for (int i = 0; i < 3; ++i) {
    for (int r = 0; r < 60; ++r)
      for (int c = 60 * i; c < 60 * (i + 1); ++c)
        for (int ch = 0; ch < 3; ++ch) measured[i][ch] += tile.at(r, c, ch) / 3600.0;
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      double gap = 0;
      for (int ch = 0; ch < 3; ++ch) gap = std::max(gap, std::abs(measured[a][ch] - measured[b][ch]));
      EXPECT_GE(gap, 40.0) << names[a] << " vs " << names[b];
      double expected_gap = 0;
      for (int ch = 0; ch < 3; ++ch)
        expected_gap = std::max(expected_gap, std::abs(expected[a][ch] - expected[b][ch]));
      EXPECT_GE(expected_gap, 40.0);
    }
  }
}

TEST(SyntheticTile, LayoutValidation) {
  auto l = strips({"forest", "industrial"});
  auto overlap = l;
  overlap.regions[1].col0 -= 1;
  overlap.regions[1].cols = 21;
  overlap.width = 40;
  EXPECT_EQ(error_of([&] { make_synthetic_tile(overlap, 1); }), ErrorCode::layout_validation);
  auto gap = l;
  gap.regions[1].cols = 19;
  EXPECT_EQ(error_of([&] { make_synthetic_tile(gap, 1); }), ErrorCode::layout_validation);
  auto unknown = l;
  unknown.regions[0].archetype = "moon";
  EXPECT_EQ(error_of([&] { make_synthetic_tile(unknown, 1); }), ErrorCode::layout_validation);
  auto outside = l;
  outside.regions[1].rows = 31;
  EXPECT_EQ(error_of([&] { make_synthetic_tile(outside, 1); }), ErrorCode::layout_validation);
}

TEST(GeoTransform, InvertRoundTrip) {
  const GeoTransform t{{5.0, 0.001, 0.0002, 50.0, -0.0001, -0.001}};
  for (double r : {0.0, 3.5, 100.0}) {
    for (double c : {0.0, 7.25, 64.0}) {
      const auto p = t.apply(r, c);
      const auto back = t.invert(p);
      EXPECT_NEAR(back[0], r, 1e-9);
      EXPECT_NEAR(back[1], c, 1e-9);
    }
  }
  const GeoTransform singular{{0, 1, 2, 0, 2, 4}};
  EXPECT_EQ(error_of([&] { singular.invert({0, 0}); }), ErrorCode::validation);
  EXPECT_EQ(error_of([&] { RasterTile(4, 4, singular, 10, "s"); }), ErrorCode::validation);
  EXPECT_EQ(error_of([&] { RasterTile(0, 4, hundredth(), 10, "s"); }), ErrorCode::validation);
  EXPECT_EQ(error_of([&] { RasterTile(4, 4, hundredth(), 0, "s"); }), ErrorCode::validation);
}

TEST(RasterStore, SaveLoadExtract) {
  const auto dir = testsupport::scratch_dir("store");
  const auto a = make_synthetic_tile(strips({"forest"}, 20, 20), 1);
  auto lb = strips({"industrial"}, 20, 20);
  lb.transform.c[0] = 0.2;  // east of the first tile
  const auto b = make_synthetic_tile(lb, 2);
  RasterStore::save(dir / "manifest.csv", {a, b});
  const auto store = RasterStore::load(dir / "manifest.csv");
  ASSERT_EQ(store.tiles().size(), 2u);
  EXPECT_EQ(store.tiles()[1].pixels(), b.pixels());
  EXPECT_EQ(store.season_tag(), "spring");
  // The box lies inside the second tile only.
  const auto box = box_of({-0.15, -0.05, 0.25, 0.35});
  EXPECT_EQ(store.extract(box).pixels, extract_patch(b, box).pixels);
  EXPECT_EQ(error_of([&] { store.extract(box_of({10, 11, 10, 11})); }), ErrorCode::out_of_extent);
  EXPECT_EQ(error_of([&] { RasterStore::load(dir / "missing.csv"); }), ErrorCode::io);
}

TEST(RasterStore, SeasonMismatchIsRejected) {
  const auto dir = testsupport::scratch_dir("season");
  auto l = strips({"forest"}, 8, 8);
  const auto a = make_synthetic_tile(l, 1);
  l.season_tag = "autumn";
  const auto b = make_synthetic_tile(l, 1);
  EXPECT_EQ(error_of([&] { RasterStore::save(dir / "m.csv", {a, b}); }), ErrorCode::season_mismatch);

  // Hand-written manifest mixing two seasons.
  write_ppm(dir / "t.ppm", a.height(), a.width(), a.pixels());
  std::ofstream(dir / "mixed.csv") << "path,gt0,gt1,gt2,gt3,gt4,gt5,resolution_m,season_tag\n"
                                   << "t.ppm,0,0.01,0,0,0,-0.01,10,spring\n"
                                   << "t.ppm,1,0.01,0,0,0,-0.01,10,summer\n";
  EXPECT_EQ(error_of([&] { RasterStore::load(dir / "mixed.csv"); }), ErrorCode::season_mismatch);
}

TEST(RasterStore, ImportImageAppendsRecords) {
  const auto dir = testsupport::scratch_dir("import");
  const auto t = make_synthetic_tile(strips({"residential"}, 10, 12), 4);
  write_ppm(dir / "scene.ppm", t.height(), t.width(), t.pixels());
  const auto manifest = dir / "store" / "manifest.csv";
  std::filesystem::create_directories(manifest.parent_path());
  RasterStore::import_image(manifest, dir / "scene.ppm", hundredth(), 10, "spring");
  GeoTransform shifted = hundredth();
  shifted.c[0] = 1.0;
  RasterStore::import_image(manifest, dir / "scene.ppm", shifted, 10, "spring");
  EXPECT_EQ(error_of([&] {
              RasterStore::import_image(manifest, dir / "scene.ppm", shifted, 10, "winter");
            }),
            ErrorCode::season_mismatch);
  const auto store = RasterStore::load(manifest);
  ASSERT_EQ(store.tiles().size(), 2u);
  EXPECT_EQ(store.tiles()[0].pixels(), t.pixels());
  EXPECT_DOUBLE_EQ(store.tiles()[1].geo_transform().c[0], 1.0);
}

TEST(ImageFiles, PpmRoundTripAndBadInput) {
  const auto dir = testsupport::scratch_dir("ppm");
  std::vector<std::uint8_t> px(5 * 3 * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 7);
  write_ppm(dir / "a.ppm", 5, 3, px);
  const auto img = read_image(dir / "a.ppm");
  EXPECT_EQ(img.height, 5);
  EXPECT_EQ(img.width, 3);
  EXPECT_EQ(img.pixels, px);
  std::ofstream(dir / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_EQ(error_of([&] { read_image(dir / "bad.ppm"); }), ErrorCode::io);
  std::ofstream(dir / "x.gif") << "GIF89a";
  EXPECT_EQ(error_of([&] { read_image(dir / "x.gif"); }), ErrorCode::io);
  std::ofstream(dir / "broken.jpg") << "not a jpeg";
  EXPECT_EQ(error_of([&] { read_image(dir / "broken.jpg"); }), ErrorCode::io);
}
