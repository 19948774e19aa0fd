#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "geokpi/errors.hpp"
#include "geokpi/forecast.hpp"
#include "geokpi/geometry.hpp"
#include "geokpi/nn.hpp"
#include "geokpi/raster.hpp"
#include "geokpi/vision.hpp"

namespace testsupport {

/// Code of the geokpi::Error raised by `fn`; records a test failure when
/// nothing is raised.
template <class F>
geokpi::ErrorCode error_of(F&& fn) {
  try {
    fn();
  } catch (const geokpi::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return geokpi::ErrorCode::io;
}

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

/// Destination point by rotating the site's n-vector about the axis
/// perpendicular to the travel direction. Shares no code with geometry.
geokpi::geometry::LatLon nvector_destination(geokpi::geometry::LatLon origin, double bearing_deg,
                                             double distance_m);

/// Midpoint of the shorter great-circle arc between two points.
geokpi::geometry::LatLon great_circle_midpoint(geokpi::geometry::LatLon a,
                                               geokpi::geometry::LatLon b);

/// Adjusted Rand Index by explicit pair counting over all n(n-1)/2 pairs.
double ari_pair_counting(const std::vector<int>& a, const std::vector<int>& b);

/// Closed-form weights keyed on parameter name; the Python oracle uses the
/// same formula.
geokpi::nn::WeightMap formula_weights(const geokpi::nn::ParamSet& params);

/// 64x64 test card: pixel(r, c, ch) = (7r + 13c + 50ch) mod 256.
geokpi::raster::ImagePatch test_card();

struct Blobs {
  std::vector<geokpi::vision::Embedding> embeddings;
  std::vector<int> labels;  ///< in the same order as embeddings
};

/// `k` isotropic Gaussian blobs of `per_blob` points in `dim` dimensions on
/// a regular simplex with pairwise centre distance `separation`.
Blobs make_blobs(int k, int per_blob, int dim, double separation, double sigma,
                 std::uint64_t seed);

/// Series of `days` x 96 samples: offset + amplitude * sin(2 pi t / 96 + phase).
geokpi::kpi::KpiSeries diurnal(const std::string& id, int days, double offset, double amplitude,
                               double phase);

/// MSE <= MAE for every cell whose pointwise errors all lie within [-1, 1].
bool mse_le_mae(const geokpi::forecast::MetricsReport& report);

}  // namespace testsupport
