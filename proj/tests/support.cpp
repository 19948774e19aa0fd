#include "support.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <unistd.h>

namespace testsupport {

namespace fs = std::filesystem;
using namespace geokpi;

fs::path scratch_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  const auto dir = fs::temp_directory_path() /
                   ("geokpi_" + name + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

geometry::LatLon nvector_destination(geometry::LatLon origin, double bearing_deg,
                                     double distance_m) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double lat = origin.lat * deg, lon = origin.lon * deg, theta = bearing_deg * deg;
  const std::array<double, 3> n{std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon),
                                std::sin(lat)};
  const std::array<double, 3> east{-std::sin(lon), std::cos(lon), 0.0};
  const std::array<double, 3> north{-std::sin(lat) * std::cos(lon), -std::sin(lat) * std::sin(lon),
                                    std::cos(lat)};
  const double delta = distance_m / geometry::earth_radius_m;
  std::array<double, 3> p{};
  for (int i = 0; i < 3; ++i) {
    const double dir = std::cos(theta) * north[i] + std::sin(theta) * east[i];
    p[i] = n[i] * std::cos(delta) + dir * std::sin(delta);
  }
  return {std::atan2(p[2], std::hypot(p[0], p[1])) / deg, std::atan2(p[1], p[0]) / deg};
}

geometry::LatLon great_circle_midpoint(geometry::LatLon a, geometry::LatLon b) {
  constexpr double deg = std::numbers::pi / 180.0;
  auto vec = [&](const geometry::LatLon& p) {
    return std::array<double, 3>{std::cos(p.lat * deg) * std::cos(p.lon * deg),
                                 std::cos(p.lat * deg) * std::sin(p.lon * deg),
                                 std::sin(p.lat * deg)};
  };
  const auto u = vec(a), v = vec(b);
  const std::array<double, 3> m{u[0] + v[0], u[1] + v[1], u[2] + v[2]};
  return {std::atan2(m[2], std::hypot(m[0], m[1])) / deg, std::atan2(m[1], m[0]) / deg};
}

double ari_pair_counting(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  double both = 0, only_a = 0, only_b = 0, neither = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      if (sa && sb) ++both;
      else if (sa) ++only_a;
      else if (sb) ++only_b;
      else ++neither;
    }
  }
  const double pairs = both + only_a + only_b + neither;
  const double same_a = both + only_a, same_b = both + only_b;
  const double expected = same_a * same_b / pairs;
  const double max_index = 0.5 * (same_a + same_b);
  if (max_index == expected) return 1.0;
  return (both - expected) / (max_index - expected);
}

nn::WeightMap formula_weights(const nn::ParamSet& params) {
  nn::WeightMap out;
  for (const auto& p : params.params()) {
    const auto n = static_cast<std::size_t>(p.numel());
    int h = 0;
    for (unsigned char ch : p.name) h += ch;
    nn::NamedArray a;
    a.shape = p.shape;
    a.values.resize(n);
    const auto ends_with = [&](std::string_view s) {
      return p.name.size() >= s.size() && p.name.compare(p.name.size() - s.size(), s.size(), s) == 0;
    };
    for (std::size_t i = 0; i < n; ++i) {
      const double s = std::sin(0.37 * static_cast<double>(i) + 0.011 * h);
      double v;
      if (ends_with("running_var")) v = 1.0 + 0.2 * std::abs(s);
      else if (ends_with("running_mean")) v = 0.05 * s;
      else if (p.name == "class_token" || p.name == "encoder.pos_embedding") v = 0.02 * s;
      else if (p.shape.size() == 1) v = ends_with("weight") ? 1.0 + 0.1 * s : 0.05 * s;
      else v = s / std::sqrt(static_cast<double>(n) / static_cast<double>(p.shape[0]));
      a.values[i] = static_cast<float>(v);
    }
    out.emplace(p.name, std::move(a));
  }
  return out;
}

raster::ImagePatch test_card() {
  raster::ImagePatch p;
  for (int r = 0; r < raster::patch_size; ++r) {
    for (int c = 0; c < raster::patch_size; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        p.pixels[(static_cast<std::size_t>(r) * raster::patch_size + c) * 3 + ch] =
            static_cast<std::uint8_t>((7 * r + 13 * c + 50 * ch) % 256);
      }
    }
  }
  return p;
}

Blobs make_blobs(int k, int per_blob, int dim, double separation, double sigma,
                 std::uint64_t seed) {
  // Scaled standard basis vectors are pairwise sqrt(2) apart.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  Blobs b;
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < per_blob; ++i) {
      vision::Embedding e;
      e.vector.assign(dim, 0.0);
      e.vector[c % dim] = separation / std::sqrt(2.0);
      for (auto& v : e.vector) v += noise(rng);
      e.cell_id = "p" + std::to_string(c * per_blob + i + 1000);
      e.backbone_name = "blobs";
      b.embeddings.push_back(std::move(e));
      b.labels.push_back(c);
    }
  }
  // Shuffle so storage order says nothing about the labels.
  std::vector<std::size_t> order(b.labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Blobs shuffled;
  for (auto i : order) {
    shuffled.embeddings.push_back(b.embeddings[i]);
    shuffled.labels.push_back(b.labels[i]);
  }
  return shuffled;
}

kpi::KpiSeries diurnal(const std::string& id, int days, double offset, double amplitude,
                       double phase) {
  kpi::KpiSeries s;
  s.cell_id = id;
  s.start_epoch_s = 1709251200;
  s.values.resize(static_cast<std::size_t>(days) * 96);
  for (std::size_t t = 0; t < s.values.size(); ++t) {
    s.values[t] =
        offset + amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 96.0 + phase);
  }
  return s;
}

bool mse_le_mae(const forecast::MetricsReport& report) {
  for (const auto& c : report.cells) {
    if (c.max_abs_error <= 1.0 && c.mse > c.mae) return false;
  }
  return true;
}

}  // namespace testsupport
