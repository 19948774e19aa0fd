#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geokpi/vision.hpp"

namespace geokpi::profiling {

struct KMeansOptions {
  int restarts = 10;
  double tolerance = 1e-6;  ///< max centroid movement at convergence
  int max_iterations = 300;
};

struct KMeansResult {
  Eigen::MatrixXd centroids;  ///< k x dim
  std::vector<int> labels;
  double inertia = 0.0;
};

/// Lloyd's algorithm from k-means++ seeds; best of `restarts` by inertia.
/// Rows of `points` are observations.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                    const KMeansOptions& options = {});

struct InertiaPoint {
  int k = 0;
  double inertia = 0.0;
};

/// Knee of an inertia curve: with k and inertia each rescaled to [0, 1], the
/// point lying furthest below the chord joining the first and last points.
/// A flat curve (all inertias equal) selects the first k. Ties select the
/// smaller k.
int knee_point(const std::vector<InertiaPoint>& curve);

struct ClusterModel {
  Eigen::MatrixXd centroids;
  int k = 0;
  std::map<std::string, int> membership;
  std::vector<InertiaPoint> inertia_curve;
  std::uint64_t seed = 0;
  std::string backbone_name;
  /// Distance of every training point to its centroid, ascending.
  std::vector<double> training_distances;

  int dim() const noexcept { return static_cast<int>(centroids.cols()); }
  /// 99th percentile of training distances (nearest rank).
  double ood_threshold() const;
  std::vector<int> member_counts() const;
};

struct ClusterOptions {
  int k_min = 1;
  int k_max = 10;
  std::optional<int> k_override;
  KMeansOptions kmeans;
};

/// Scans k over [k_min, k_max], picks the knee (or the override) and refits.
/// Embeddings are processed in cell_id order.
ClusterModel fit_clusters(const std::vector<vision::Embedding>& embeddings, std::uint64_t seed,
                          const ClusterOptions& options = {});

struct Assignment {
  int cluster = 0;
  double distance = 0.0;
  /// Distance exceeds the 99th percentile of training distances.
  bool out_of_distribution = false;
};

/// Nearest centroid by Euclidean distance, lowest index on ties.
Assignment assign(const std::vector<double>& embedding, const ClusterModel& model);

/// Adjusted Rand Index between two labelings of the same items.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

/// Writes centroids.csv, membership.csv, inertia.csv, training_distances.csv
/// and metadata.json into `dir`.
void save(const ClusterModel& model, const std::filesystem::path& dir);
ClusterModel load(const std::filesystem::path& dir);

}  // namespace geokpi::profiling
