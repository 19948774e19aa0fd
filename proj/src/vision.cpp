#include "geokpi/vision.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "geokpi/errors.hpp"
#include "geokpi/util.hpp"

namespace geokpi::vision {

Embedding embed(const raster::ImagePatch& patch, const Backbone& backbone) {
  if (!backbone.initialized()) {
    throw Error(ErrorCode::not_initialized,
                "backbone '" + backbone.name() + "' has no weights loaded");
  }
  const auto f = backbone.features(patch);
  Embedding e;
  e.vector.assign(f.begin(), f.end());
  for (double v : e.vector) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::validation, "non-finite embedding for '" + patch.source_cell_id + "'");
    }
  }
  e.cell_id = patch.source_cell_id;
  e.backbone_name = backbone.name();
  return e;
}

Dataset load_image_folder(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) {
    throw Error(ErrorCode::io, "dataset root '" + root.string() + "' is not a directory");
  }
  Dataset ds;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.is_directory()) ds.class_names.push_back(entry.path().filename().string());
  }
  std::sort(ds.class_names.begin(), ds.class_names.end());
  for (std::size_t label = 0; label < ds.class_names.size(); ++label) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(root / ds.class_names[label])) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      const auto img = raster::read_image(file);
      // Map the full image onto a unit-pixel tile and crop all of it.
      raster::RasterTile tile(img.height, img.width,
                              raster::GeoTransform{{0.0, 1.0, 0.0, 0.0, 0.0, -1.0}}, 1.0, "");
      tile.pixels() = img.pixels;
      geometry::CoverageBox box;
      box.bbox = {-static_cast<double>(img.height), 0.0, 0.0, static_cast<double>(img.width)};
      LabeledImage item{raster::extract_patch(tile, box, file.filename().string()),
                        static_cast<int>(label)};
      ds.items.push_back(std::move(item));
    }
  }
  return ds;
}

Split stratified_split(const std::vector<int>& labels, int num_classes, double train_fraction,
                       std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw Error(ErrorCode::validation, "label out of range");
    }
    by_class[labels[i]].push_back(i);
  }
  Split split;
  for (int c = 0; c < num_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2) {
      throw Error(ErrorCode::stratification,
                  "class " + std::to_string(c) + " has fewer than 2 examples");
    }
    std::mt19937_64 rng(util::derive_seed(seed, "split/" + std::to_string(c)));
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::lround(train_fraction * idx.size()));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + n_train);
    split.test.insert(split.test.end(), idx.begin() + n_train, idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

ClassificationMetrics classification_metrics(const std::vector<int>& truth,
                                             const std::vector<int>& predicted, int num_classes) {
  if (truth.size() != predicted.size()) throw Error(ErrorCode::shape, "label count mismatch");
  ClassificationMetrics m;
  const auto k = static_cast<std::size_t>(num_classes);
  m.confusion.assign(k, std::vector<std::int64_t>(k, 0));
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++m.confusion[truth[i]][predicted[i]];
    correct += truth[i] == predicted[i];
  }
  m.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / truth.size();
  m.class_precision.assign(k, 0.0);
  m.class_recall.assign(k, 0.0);
  m.class_f1.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t predicted_c = 0, support = 0;
    for (std::size_t o = 0; o < k; ++o) {
      predicted_c += m.confusion[o][c];
      support += m.confusion[c][o];
    }
    const double tp = static_cast<double>(m.confusion[c][c]);
    // zero when the denominator is empty
    const double p = predicted_c > 0 ? tp / predicted_c : 0.0;
    const double r = support > 0 ? tp / support : 0.0;
    m.class_precision[c] = p;
    m.class_recall[c] = r;
    m.class_f1[c] = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  m.precision = mean(m.class_precision);
  m.recall = mean(m.class_recall);
  m.f1 = mean(m.class_f1);
  return m;
}

namespace {

struct SoftmaxHead {
  Eigen::MatrixXd weights;  // classes x dim
  Eigen::VectorXd bias;
  Eigen::VectorXd feature_mean, feature_scale;

  Eigen::VectorXd standardize(const Eigen::VectorXd& x) const {
    return (x - feature_mean).cwiseQuotient(feature_scale);
  }

  int predict(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd logits = weights * standardize(x) + bias;
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return static_cast<int>(best);
  }
};

BackboneResult evaluate_backbone(const Dataset& dataset, const Split& split,
                                 const BackboneSpec& spec, int budget, std::uint64_t seed,
                                 const TrainingRecipe& recipe) {
  const auto backbone = load_backbone(spec);
  const int num_classes = static_cast<int>(dataset.class_names.size());
  BackboneResult result;
  result.name = backbone->name();
  result.param_count = backbone->param_count(num_classes);
  result.train_seed = util::derive_seed(seed, "train/" + result.name);

  const int dim = backbone->embedding_dim();
  std::vector<Eigen::VectorXd> features(dataset.items.size());
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    const auto f = backbone->features(dataset.items[i].image);
    features[i] = Eigen::Map<const Eigen::VectorXf>(f.data(), dim).cast<double>();
  }

  SoftmaxHead head;
  head.weights = Eigen::MatrixXd::Zero(num_classes, dim);
  head.bias = Eigen::VectorXd::Zero(num_classes);
  head.feature_mean = Eigen::VectorXd::Zero(dim);
  head.feature_scale = Eigen::VectorXd::Ones(dim);
  for (auto i : split.train) head.feature_mean += features[i];
  head.feature_mean /= static_cast<double>(split.train.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (auto i : split.train) var += (features[i] - head.feature_mean).cwiseAbs2();
  var /= static_cast<double>(split.train.size());
  head.feature_scale = var.cwiseSqrt().cwiseMax(1e-6);

  std::mt19937_64 rng(result.train_seed);
  std::vector<std::size_t> order = split.train;
  double lr = recipe.learning_rate;
  for (int epoch = 0; epoch < budget; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += recipe.batch_size) {
      const std::size_t end = std::min(order.size(), start + recipe.batch_size);
      Eigen::MatrixXd grad_w = Eigen::MatrixXd::Zero(num_classes, dim);
      Eigen::VectorXd grad_b = Eigen::VectorXd::Zero(num_classes);
      for (std::size_t j = start; j < end; ++j) {
        const auto idx = order[j];
        const Eigen::VectorXd x = head.standardize(features[idx]);
        Eigen::VectorXd z = head.weights * x + head.bias;
        z.array() -= z.maxCoeff();
        Eigen::VectorXd p = z.array().exp();
        p /= p.sum();
        const int y = dataset.items[idx].label;
        loss -= std::log(std::max(p(y), 1e-300));
        p(y) -= 1.0;
        grad_w += p * x.transpose();
        grad_b += p;
      }
      const double n = static_cast<double>(end - start);
      head.weights -= (lr / n) * grad_w;
      head.bias -= (lr / n) * grad_b;
    }
    result.loss_history.push_back(loss / static_cast<double>(order.size()));
    lr *= recipe.lr_decay;
  }

  std::vector<int> truth, predicted;
  for (auto i : split.test) {
    truth.push_back(dataset.items[i].label);
    predicted.push_back(head.predict(features[i]));
  }
  result.metrics = classification_metrics(truth, predicted, num_classes);
  return result;
}

}  // namespace

BenchmarkReport benchmark_backbones(const Dataset& dataset, const std::vector<BackboneSpec>& specs,
                                    int budget, std::uint64_t seed,
                                    const TrainingRecipe& recipe) {
  if (specs.empty()) throw Error(ErrorCode::validation, "no backbones to benchmark");
  if (budget < 0) throw Error(ErrorCode::validation, "budget must be non-negative");
  if (recipe.batch_size < 1) throw Error(ErrorCode::validation, "batch_size must be positive");
  for (const auto& s : specs) make_backbone(s.name);

  const int num_classes = static_cast<int>(dataset.class_names.size());
  std::vector<int> labels;
  for (const auto& item : dataset.items) labels.push_back(item.label);

  BenchmarkReport report;
  report.split_seed = seed;
  report.budget = budget;
  report.recipe = recipe;
  report.class_names = dataset.class_names;
  report.split = stratified_split(labels, num_classes, benchmark_train_fraction, seed);
  for (const auto& spec : specs) {
    report.results.push_back(evaluate_backbone(dataset, report.split, spec, budget, seed, recipe));
  }
  return report;
}

const BackboneResult& BenchmarkReport::best() const {
  if (results.empty()) throw Error(ErrorCode::validation, "empty benchmark report");
  const auto it = std::min_element(results.begin(), results.end(), [](const auto& a, const auto& b) {
    if (a.metrics.accuracy != b.metrics.accuracy) return a.metrics.accuracy > b.metrics.accuracy;
    if (a.metrics.f1 != b.metrics.f1) return a.metrics.f1 > b.metrics.f1;
    return a.param_count < b.param_count;
  });
  return *it;
}

std::string BenchmarkReport::to_json() const {
  nlohmann::json j;
  j["split_seed"] = split_seed;
  j["train_fraction"] = train_fraction;
  j["budget_epochs"] = budget;
  j["averaging"] = "macro";
  j["recipe"] = {{"loss", "cross_entropy"},
                 {"optimizer", "minibatch_gradient_descent"},
                 {"learning_rate", recipe.learning_rate},
                 {"lr_decay_per_epoch", recipe.lr_decay},
                 {"batch_size", recipe.batch_size},
                 {"trunk", "frozen"},
                 {"feature_standardization", "train_split_zscore"}};
  j["class_names"] = class_names;
  j["train_count"] = split.train.size();
  j["test_count"] = split.test.size();
  j["backbones"] = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json b;
    b["name"] = r.name;
    b["param_count"] = r.param_count;
    b["train_seed"] = r.train_seed;
    b["accuracy"] = r.metrics.accuracy;
    b["precision"] = r.metrics.precision;
    b["recall"] = r.metrics.recall;
    b["f1"] = r.metrics.f1;
    b["class_precision"] = r.metrics.class_precision;
    b["class_recall"] = r.metrics.class_recall;
    b["class_f1"] = r.metrics.class_f1;
    b["confusion"] = r.metrics.confusion;
    b["loss_history"] = r.loss_history;
    j["backbones"].push_back(std::move(b));
  }
  if (!results.empty()) j["selected"] = best().name;
  return j.dump(2);
}

}  // namespace geokpi::vision
