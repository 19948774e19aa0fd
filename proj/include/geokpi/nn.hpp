#pragma once

// Inference-only building blocks for the image backbones. Parameter names
// follow torchvision's state_dict keys so exported checkpoints load as-is.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace geokpi::nn {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Channel-major feature map (C x H x W).
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int channels, int height, int width)
      : c(channels), h(height), w(width),
        data(static_cast<std::size_t>(channels) * height * width, 0.0f) {}

  float* channel(int k) noexcept { return data.data() + static_cast<std::size_t>(k) * h * w; }
  const float* channel(int k) const noexcept {
    return data.data() + static_cast<std::size_t>(k) * h * w;
  }
  Eigen::Map<RowMatrix> matrix() { return {data.data(), c, h * w}; }
  Eigen::Map<const RowMatrix> matrix() const { return {data.data(), c, h * w}; }
};

struct Param {
  std::string name;
  std::vector<std::int64_t> shape;
  bool trainable = true;
  std::vector<float> value;  ///< empty until weights are loaded

  std::int64_t numel() const noexcept;
  const float* data() const noexcept { return value.data(); }
};

struct NamedArray {
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

using WeightMap = std::map<std::string, NamedArray>;

/// Binary checkpoint: magic "GKW1", u32 count, then per entry
/// u32 name length, name bytes, u32 rank, i64 dims[rank], f32 values.
WeightMap read_weights(const std::filesystem::path& path);
void write_weights(const std::filesystem::path& path, const WeightMap& weights);

/// Owns every parameter of one architecture at stable addresses.
class ParamSet {
public:
  Param* add(std::string name, std::vector<std::int64_t> shape, bool trainable = true);

  std::int64_t trainable_count() const noexcept;
  bool loaded() const noexcept { return loaded_; }

  /// Copies matching entries; throws not_initialized naming the first
  /// missing parameter and shape error on a dimension mismatch.
  void load(const WeightMap& weights);

  const std::deque<Param>& params() const noexcept { return params_; }

private:
  std::deque<Param> params_;
  bool loaded_ = false;
};

struct Conv2d {
  Param* weight = nullptr;
  Param* bias = nullptr;
  int in = 0, out = 0, kernel = 1, stride = 1, pad = 0, groups = 1;

  Conv2d() = default;
  Conv2d(ParamSet& ps, const std::string& prefix, int in, int out, int kernel, int stride,
         int pad, int groups = 1, bool with_bias = false);
  Tensor operator()(const Tensor& x) const;
};

struct BatchNorm2d {
  Param *gamma = nullptr, *beta = nullptr, *mean = nullptr, *var = nullptr;
  float eps = 1e-5f;

  BatchNorm2d() = default;
  BatchNorm2d(ParamSet& ps, const std::string& prefix, int channels, float eps = 1e-5f);
  void apply(Tensor& x) const;
};

struct Linear {
  Param* weight = nullptr;
  Param* bias = nullptr;
  int in = 0, out = 0;

  Linear() = default;
  Linear(ParamSet& ps, const std::string& prefix, int in, int out);
  /// Rows of `x` are samples: (N x in) -> (N x out).
  RowMatrix operator()(const RowMatrix& x) const;
};

struct LayerNorm {
  Param* weight = nullptr;
  Param* bias = nullptr;
  float eps = 1e-6f;

  LayerNorm() = default;
  LayerNorm(ParamSet& ps, const std::string& prefix, int dim, float eps);
  RowMatrix operator()(const RowMatrix& x) const;
};

void relu(Tensor& x) noexcept;
void silu(Tensor& x) noexcept;
void gelu(RowMatrix& x) noexcept;
Tensor max_pool(const Tensor& x, int kernel, int stride, int pad);
/// Global average over H x W.
std::vector<float> global_avg_pool(const Tensor& x);
void add_inplace(Tensor& x, const Tensor& y);

/// Bilinear resize with half-pixel centres and edge clamping.
Tensor resize_bilinear(const Tensor& x, int height, int width);

}  // namespace geokpi::nn
