#include "geokpi/profiling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "geokpi/errors.hpp"
#include "geokpi/util.hpp"

namespace geokpi::profiling {

namespace {

using Eigen::MatrixXd;

struct LloydState {
  MatrixXd centroids;
  std::vector<int> labels;
  double inertia = 0.0;
};

// Nearest centroid for every point; ties go to the lowest index.
double assign_all(const MatrixXd& points, const MatrixXd& centroids, std::vector<int>& labels,
                  std::vector<double>& sq_dist) {
  const auto n = points.rows();
  labels.resize(static_cast<std::size_t>(n));
  sq_dist.resize(static_cast<std::size_t>(n));
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    labels[i] = best;
    sq_dist[i] = best_d;
    inertia += best_d;
  }
  return inertia;
}

LloydState lloyd(const MatrixXd& points, MatrixXd centroids, const KMeansOptions& options) {
  const auto k = centroids.rows();
  LloydState state;
  std::vector<double> sq_dist;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    assign_all(points, centroids, state.labels, sq_dist);
    MatrixXd next = MatrixXd::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      next.row(state.labels[i]) += points.row(i);
      ++counts[state.labels[i]];
    }
    std::vector<char> taken(static_cast<std::size_t>(points.rows()), 0);
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        next.row(c) /= counts[c];
        continue;
      }
      // Empty cluster: move it onto the point worst served by its centroid.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < points.rows(); ++i) {
        if (!taken[i] && sq_dist[i] > far_d) {
          far_d = sq_dist[i];
          far = i;
        }
      }
      taken[far] = 1;
      next.row(c) = points.row(far);
    }
    const double shift = (next - centroids).rowwise().norm().maxCoeff();
    centroids = std::move(next);
    if (shift <= options.tolerance) break;
  }
  state.inertia = assign_all(points, centroids, state.labels, sq_dist);
  state.centroids = std::move(centroids);
  return state;
}

// Adds centroids to `seeds` by D^2 sampling until it has k rows.
MatrixXd kmeanspp_extend(const MatrixXd& points, MatrixXd seeds, int k, std::mt19937_64& rng) {
  const auto n = points.rows();
  MatrixXd centroids(k, points.cols());
  Eigen::Index have = seeds.rows();
  if (have > 0) centroids.topRows(have) = seeds;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (have == 0) {
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centroids.row(0) = points.row(pick(rng));
    have = 1;
  }
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < have; ++c) {
      d2[i] = std::min(d2[i], (points.row(i) - centroids.row(c)).squaredNorm());
    }
  }
  for (; have < k; ++have) {
    double total = 0.0;
    for (double d : d2) total += d;
    Eigen::Index chosen = n - 1;
    const double u = unit(rng);
    if (total > 0.0) {
      double target = u * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = std::min<Eigen::Index>(static_cast<Eigen::Index>(u * n), n - 1);
    }
    centroids.row(have) = points.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (points.row(i) - centroids.row(have)).squaredNorm());
    }
  }
  return centroids;
}

KMeansResult best_of(const MatrixXd& points, int k, std::uint64_t seed,
                     const KMeansOptions& options, const MatrixXd* warm_start) {
  if (k < 1) throw Error(ErrorCode::validation, "k must be positive");
  if (points.rows() < k) {
    throw Error(ErrorCode::insufficient_data, "need at least " + std::to_string(k) +
                                                  " points, have " +
                                                  std::to_string(points.rows()));
  }
  if (options.restarts < 1) throw Error(ErrorCode::validation, "restarts must be positive");
  std::optional<LloydState> best;
  auto consider = [&](LloydState s) {
    if (!best || s.inertia < best->inertia) best = std::move(s);
  };
  for (int r = 0; r < options.restarts; ++r) {
    std::mt19937_64 rng(util::derive_seed(seed, "restart/" + std::to_string(r)));
    consider(lloyd(points, kmeanspp_extend(points, MatrixXd(0, points.cols()), k, rng), options));
  }
  // Extending the previous k's solution guarantees inertia never rises with k.
  if (warm_start != nullptr && warm_start->rows() < k) {
    std::mt19937_64 rng(util::derive_seed(seed, "warm"));
    consider(lloyd(points, kmeanspp_extend(points, *warm_start, k, rng), options));
  }
  return {std::move(best->centroids), std::move(best->labels), best->inertia};
}

}  // namespace

KMeansResult kmeans(const MatrixXd& points, int k, std::uint64_t seed, const KMeansOptions& options) {
  return best_of(points, k, seed, options, nullptr);
}

int knee_point(const std::vector<InertiaPoint>& curve) {
  if (curve.empty()) throw Error(ErrorCode::validation, "empty inertia curve");
  const auto& first = curve.front();
  const auto& last = curve.back();
  const double span_k = last.k - first.k;
  const double span_i = first.inertia - last.inertia;
  if (span_k <= 0.0 || !(span_i > 0.0)) return first.k;
  // Both axes scaled to [0, 1] so the choice does not depend on embedding units.
  // The chord then runs from (0, 1) to (1, 0).
  int best_k = first.k;
  double best_d = 0.0;
  for (const auto& p : curve) {
    const double x = (p.k - first.k) / span_k;
    const double y = (p.inertia - last.inertia) / span_i;
    const double d = (1.0 - x - y) / std::sqrt(2.0);
    if (d > best_d) {
      best_d = d;
      best_k = p.k;
    }
  }
  return best_k;
}

double ClusterModel::ood_threshold() const {
  if (training_distances.empty()) return std::numeric_limits<double>::infinity();
  const auto n = training_distances.size();
  auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return training_distances[rank - 1];
}

std::vector<int> ClusterModel::member_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (const auto& [id, c] : membership) ++counts[c];
  return counts;
}

ClusterModel fit_clusters(const std::vector<vision::Embedding>& embeddings, std::uint64_t seed,
                          const ClusterOptions& options) {
  if (embeddings.empty()) throw Error(ErrorCode::insufficient_data, "no embeddings to cluster");
  if (options.k_min < 1 || options.k_max < options.k_min) {
    throw Error(ErrorCode::validation, "invalid k range");
  }
  std::vector<const vision::Embedding*> sorted;
  for (const auto& e : embeddings) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->cell_id < b->cell_id; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->cell_id == sorted[i - 1]->cell_id) {
      throw Error(ErrorCode::ingestion, "duplicate cell_id '" + sorted[i]->cell_id + "'");
    }
  }
  const auto dim = sorted.front()->vector.size();
  const int k_hi = std::max(options.k_max, options.k_override.value_or(0));
  if (static_cast<int>(sorted.size()) < k_hi) {
    throw Error(ErrorCode::insufficient_data,
                std::to_string(sorted.size()) + " embeddings cannot form " +
                    std::to_string(k_hi) + " clusters");
  }
  MatrixXd points(static_cast<Eigen::Index>(sorted.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i]->vector.size() != dim) {
      throw Error(ErrorCode::validation, "embedding dimensions differ");
    }
    for (std::size_t j = 0; j < dim; ++j) points(i, j) = sorted[i]->vector[j];
  }

  ClusterModel model;
  model.seed = seed;
  model.backbone_name = sorted.front()->backbone_name;
  std::map<int, KMeansResult> fits;
  const MatrixXd* previous = nullptr;
  for (int k = options.k_min; k <= options.k_max; ++k) {
    auto fit = best_of(points, k, util::derive_seed(seed, "k/" + std::to_string(k)),
                       options.kmeans, previous);
    model.inertia_curve.push_back({k, fit.inertia});
    previous = &fits.emplace(k, std::move(fit)).first->second.centroids;
  }
  const int chosen = options.k_override.value_or(knee_point(model.inertia_curve));
  if (chosen < 1) throw Error(ErrorCode::validation, "k override must be positive");
  auto it = fits.find(chosen);
  KMeansResult final_fit = it != fits.end()
                               ? it->second
                               : kmeans(points, chosen,
                                        util::derive_seed(seed, "k/" + std::to_string(chosen)),
                                        options.kmeans);

  model.k = chosen;
  model.centroids = final_fit.centroids;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    model.membership[sorted[i]->cell_id] = final_fit.labels[i];
    model.training_distances.push_back(
        (points.row(static_cast<Eigen::Index>(i)) - model.centroids.row(final_fit.labels[i])).norm());
  }
  std::sort(model.training_distances.begin(), model.training_distances.end());
  return model;
}

Assignment assign(const std::vector<double>& embedding, const ClusterModel& model) {
  if (static_cast<Eigen::Index>(embedding.size()) != model.centroids.cols()) {
    throw Error(ErrorCode::validation, "embedding has dimension " +
                                           std::to_string(embedding.size()) + ", model expects " +
                                           std::to_string(model.centroids.cols()));
  }
  const Eigen::Map<const Eigen::RowVectorXd> x(embedding.data(),
                                               static_cast<Eigen::Index>(embedding.size()));
  Assignment a;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < model.centroids.rows(); ++c) {
    const double d = (x - model.centroids.row(c)).squaredNorm();
    if (d < best) {
      best = d;
      a.cluster = static_cast<int>(c);
    }
  }
  a.distance = std::sqrt(best);
  a.out_of_distribution = a.distance > model.ood_threshold();
  return a;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::shape, "labelings differ in length");
  const auto n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < n; ++i) {
    table[{a[i], b[i]}] += 1;
    rows[a[i]] += 1;
    cols[b[i]] += 1;
  }
  auto comb2 = [](double x) { return x * (x - 1) / 2; };
  double index = 0, sum_rows = 0, sum_cols = 0;
  for (const auto& [key, v] : table) index += comb2(v);
  for (const auto& [key, v] : rows) sum_rows += comb2(v);
  for (const auto& [key, v] : cols) sum_cols += comb2(v);
  const double expected = sum_rows * sum_cols / comb2(static_cast<double>(n));
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;  // both partitions trivial and equal in structure
  return (index - expected) / (max_index - expected);
}

void save(const ClusterModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream c;
  c.precision(17);
  c << "cluster";
  for (int j = 0; j < model.dim(); ++j) c << ",c" << j;
  c << '\n';
  for (Eigen::Index r = 0; r < model.centroids.rows(); ++r) {
    c << r;
    for (Eigen::Index j = 0; j < model.centroids.cols(); ++j) c << ',' << model.centroids(r, j);
    c << '\n';
  }
  util::write_text_atomic(dir / "centroids.csv", c.str());

  std::ostringstream m;
  m << "cell_id,cluster\n";
  for (const auto& [id, cl] : model.membership) m << util::csv_escape(id) << ',' << cl << '\n';
  util::write_text_atomic(dir / "membership.csv", m.str());

  std::ostringstream in;
  in.precision(17);
  in << "k,inertia\n";
  for (const auto& p : model.inertia_curve) in << p.k << ',' << p.inertia << '\n';
  util::write_text_atomic(dir / "inertia.csv", in.str());

  std::ostringstream d;
  d.precision(17);
  d << "distance\n";
  for (double v : model.training_distances) d << v << '\n';
  util::write_text_atomic(dir / "training_distances.csv", d.str());

  nlohmann::json meta{{"k", model.k},
                      {"seed", model.seed},
                      {"backbone_name", model.backbone_name},
                      {"embedding_dim", model.dim()},
                      {"ood_threshold", model.ood_threshold()}};
  util::write_text_atomic(dir / "metadata.json", meta.dump(2));
}

ClusterModel load(const std::filesystem::path& dir) {
  ClusterModel model;
  const auto meta = nlohmann::json::parse(util::read_text(dir / "metadata.json"));
  model.k = meta.at("k").get<int>();
  model.seed = meta.at("seed").get<std::uint64_t>();
  model.backbone_name = meta.at("backbone_name").get<std::string>();
  const int dim = meta.at("embedding_dim").get<int>();

  const auto centroids = util::read_csv(dir / "centroids.csv");
  model.centroids.resize(model.k, dim);
  if (static_cast<int>(centroids.rows.size()) != model.k) {
    throw Error(ErrorCode::ingestion, "centroid table does not match k");
  }
  for (std::size_t r = 0; r < centroids.rows.size(); ++r) {
    for (int j = 0; j < dim; ++j) {
      model.centroids(static_cast<Eigen::Index>(r), j) =
          util::parse_double(centroids.rows[r][j + 1], "centroid");
    }
  }
  const auto membership = util::read_csv(dir / "membership.csv");
  for (const auto& row : membership.rows) {
    model.membership[row[0]] = static_cast<int>(util::parse_double(row[1], "cluster"));
  }
  const auto inertia = util::read_csv(dir / "inertia.csv");
  for (const auto& row : inertia.rows) {
    model.inertia_curve.push_back({static_cast<int>(util::parse_double(row[0], "k")),
                                   util::parse_double(row[1], "inertia")});
  }
  const auto dists = util::read_csv(dir / "training_distances.csv");
  for (const auto& row : dists.rows) {
    model.training_distances.push_back(util::parse_double(row[0], "distance"));
  }
  return model;
}

}  // namespace geokpi::profiling
