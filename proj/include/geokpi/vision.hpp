#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "geokpi/nn.hpp"
#include "geokpi/raster.hpp"

namespace geokpi::vision {

inline constexpr int eurosat_classes = 10;
inline constexpr double benchmark_train_fraction = 0.7;

struct BackboneSpec {
  std::string name;
  int embedding_dim = 0;
  /// Trainable parameters with a 10-class head.
  std::int64_t param_count = 0;
  /// Checkpoint path; empty for backbones that need none.
  std::string weights_ref;
};

/// Image feature extractor with a replaceable classification head.
class Backbone {
public:
  virtual ~Backbone() = default;

  virtual const std::string& name() const noexcept = 0;
  virtual int embedding_dim() const noexcept = 0;
  /// Trainable parameter count of the trunk plus a `num_classes`-way head.
  virtual std::int64_t param_count(int num_classes) const = 0;
  virtual bool initialized() const noexcept = 0;
  virtual void load_weights(const nn::WeightMap& weights) = 0;
  /// Pooled feature vector feeding the classification head.
  virtual std::vector<float> features(const raster::ImagePatch& patch) const = 0;
  /// Parameters of the trunk (empty for backbones without a checkpoint).
  virtual const nn::ParamSet* parameters() const noexcept { return nullptr; }
};

/// Names accepted by make_backbone: efficientnet_b0, resnet50, vit_b_16, toy.
std::vector<std::string> registered_backbones();

/// Throws registry error for unknown names.
std::unique_ptr<Backbone> make_backbone(std::string_view name);

/// Backbone instantiated from a spec, with its checkpoint loaded when
/// `weights_ref` is set.
std::unique_ptr<Backbone> load_backbone(const BackboneSpec& spec);

BackboneSpec describe(std::string_view name);
std::int64_t param_count(const BackboneSpec& spec, int num_classes = eurosat_classes);

/// Backbone whose embedding is a fixed random projection of simple pixel
/// statistics. Needs no checkpoint.
inline constexpr std::string_view toy_backbone_name = "toy";
inline constexpr int toy_embedding_dim = 64;

struct Embedding {
  std::vector<double> vector;
  std::string cell_id;
  std::string backbone_name;
};

/// Throws not_initialized when the backbone has no weights.
Embedding embed(const raster::ImagePatch& patch, const Backbone& backbone);

// --- benchmarking -------------------------------------------------------------

struct LabeledImage {
  raster::ImagePatch image;
  int label = 0;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<LabeledImage> items;
};

/// Directory-per-class layout (class folders sorted by name). Images that
/// are not 64x64 are resampled.
Dataset load_image_folder(const std::filesystem::path& root);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per-class shuffle by seed, first round(fraction * n_c) of each class to
/// train. Throws stratification error for a class with fewer than 2 items.
Split stratified_split(const std::vector<int>& labels, int num_classes, double train_fraction,
                       std::uint64_t seed);

/// Head training settings. Each epoch makes one shuffled pass of
/// mini-batch gradient descent on softmax cross-entropy; the step size is
/// multiplied by `lr_decay` after every epoch.
struct TrainingRecipe {
  double learning_rate = 0.5;
  double lr_decay = 0.95;
  int batch_size = 32;
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;  ///< macro
  double recall = 0.0;     ///< macro
  double f1 = 0.0;         ///< macro
  std::vector<double> class_precision, class_recall, class_f1;
  std::vector<std::vector<std::int64_t>> confusion;  ///< [true][predicted]
};

ClassificationMetrics classification_metrics(const std::vector<int>& truth,
                                             const std::vector<int>& predicted, int num_classes);

struct BackboneResult {
  std::string name;
  std::int64_t param_count = 0;
  std::uint64_t train_seed = 0;
  ClassificationMetrics metrics;
  std::vector<double> loss_history;
};

struct BenchmarkReport {
  std::uint64_t split_seed = 0;
  double train_fraction = benchmark_train_fraction;
  int budget = 0;
  TrainingRecipe recipe;
  std::vector<std::string> class_names;
  Split split;
  std::vector<BackboneResult> results;

  /// Highest accuracy, ties broken by macro-F1 then fewer parameters.
  const BackboneResult& best() const;
  std::string to_json() const;
};

/// Adapts every backbone to the dataset for `budget` epochs and scores it
/// on the held-out 30%. Trunk weights stay frozen; the classification head
/// is trained on standardized trunk features.
BenchmarkReport benchmark_backbones(const Dataset& dataset, const std::vector<BackboneSpec>& specs,
                                    int budget, std::uint64_t seed,
                                    const TrainingRecipe& recipe = {});

}  // namespace geokpi::vision
