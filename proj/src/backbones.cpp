#include <array>
#include <cmath>
#include <random>

#include "geokpi/errors.hpp"
#include "geokpi/util.hpp"
#include "geokpi/vision.hpp"

namespace geokpi::vision {

namespace {

using nn::BatchNorm2d;
using nn::Conv2d;
using nn::ParamSet;
using nn::RowMatrix;
using nn::Tensor;

constexpr std::array<float, 3> imagenet_mean{0.485f, 0.456f, 0.406f};
constexpr std::array<float, 3> imagenet_std{0.229f, 0.224f, 0.225f};

Tensor to_tensor(const raster::ImagePatch& patch) {
  constexpr int n = raster::patch_size;
  Tensor t(3, n, n);
  for (int c = 0; c < 3; ++c) {
    float* dst = t.channel(c);
    for (int i = 0; i < n * n; ++i) {
      const float v = patch.pixels[static_cast<std::size_t>(i) * 3 + c] / 255.0f;
      dst[i] = (v - imagenet_mean[c]) / imagenet_std[c];
    }
  }
  return t;
}

std::int64_t head_params(int dim, int num_classes) {
  if (num_classes < 1) throw Error(ErrorCode::validation, "num_classes must be positive");
  ParamSet head;
  nn::Linear(head, "head", dim, num_classes);
  return head.trainable_count();
}

/// Shared plumbing for checkpoint-backed backbones.
class CheckpointBackbone : public Backbone {
public:
  CheckpointBackbone(std::string name, int dim) : name_(std::move(name)), dim_(dim) {}

  const std::string& name() const noexcept override { return name_; }
  int embedding_dim() const noexcept override { return dim_; }
  std::int64_t param_count(int num_classes) const override {
    return params_.trainable_count() + head_params(dim_, num_classes);
  }
  bool initialized() const noexcept override { return params_.loaded(); }
  void load_weights(const nn::WeightMap& weights) override { params_.load(weights); }
  const nn::ParamSet* parameters() const noexcept override { return &params_; }

  std::vector<float> features(const raster::ImagePatch& patch) const override {
    if (!initialized()) {
      throw Error(ErrorCode::not_initialized, "backbone '" + name_ + "' has no weights loaded");
    }
    return forward(to_tensor(patch));
  }

protected:
  virtual std::vector<float> forward(Tensor x) const = 0;

  ParamSet params_;

private:
  std::string name_;
  int dim_;
};

// Conv -> BN -> optional activation, as in torchvision's Conv2dNormActivation.
struct ConvBnAct {
  Conv2d conv;
  BatchNorm2d bn;
  enum class Act { none, silu, relu } act = Act::none;

  ConvBnAct() = default;
  ConvBnAct(ParamSet& ps, const std::string& prefix, int in, int out, int k, int stride,
            int groups, Act a)
      : conv(ps, prefix + ".0", in, out, k, stride, (k - 1) / 2, groups),
        bn(ps, prefix + ".1", out),
        act(a) {}

  Tensor operator()(const Tensor& x) const {
    Tensor y = conv(x);
    bn.apply(y);
    if (act == Act::silu) nn::silu(y);
    if (act == Act::relu) nn::relu(y);
    return y;
  }
};

// --- EfficientNet-B0 ------------------------------------------------------------

struct SqueezeExcite {
  Conv2d fc1, fc2;

  SqueezeExcite() = default;
  SqueezeExcite(ParamSet& ps, const std::string& prefix, int channels, int squeezed)
      : fc1(ps, prefix + ".fc1", channels, squeezed, 1, 1, 0, 1, true),
        fc2(ps, prefix + ".fc2", squeezed, channels, 1, 1, 0, 1, true) {}

  void apply(Tensor& x) const {
    const auto pooled = nn::global_avg_pool(x);
    Tensor s(x.c, 1, 1);
    s.data = pooled;
    Tensor z = fc1(s);
    nn::silu(z);
    Tensor e = fc2(z);
    const int n = x.h * x.w;
    for (int c = 0; c < x.c; ++c) {
      const float gate = 1.0f / (1.0f + std::exp(-e.data[c]));
      float* p = x.channel(c);
      for (int i = 0; i < n; ++i) p[i] *= gate;
    }
  }
};

struct MBConv {
  bool has_expand = false;
  bool residual = false;
  ConvBnAct expand, depthwise, project;
  SqueezeExcite se;

  MBConv(ParamSet& ps, const std::string& prefix, int expand_ratio, int kernel, int stride,
         int in, int out) {
    const int hidden = in * expand_ratio;
    has_expand = expand_ratio != 1;
    residual = stride == 1 && in == out;
    int idx = 0;
    auto slot = [&] { return prefix + ".block." + std::to_string(idx++); };
    if (has_expand) expand = ConvBnAct(ps, slot(), in, hidden, 1, 1, 1, ConvBnAct::Act::silu);
    depthwise = ConvBnAct(ps, slot(), hidden, hidden, kernel, stride, hidden,
                          ConvBnAct::Act::silu);
    se = SqueezeExcite(ps, slot(), hidden, std::max(1, in / 4));
    project = ConvBnAct(ps, slot(), hidden, out, 1, 1, 1, ConvBnAct::Act::none);
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = has_expand ? expand(x) : x;
    y = depthwise(y);
    se.apply(y);
    y = project(y);
    // stochastic depth is the identity at inference
    if (residual) nn::add_inplace(y, x);
    return y;
  }
};

class EfficientNetB0 final : public CheckpointBackbone {
public:
  EfficientNetB0() : CheckpointBackbone("efficientnet_b0", 1280) {
    struct Stage {
      int expand, kernel, stride, in, out, layers;
    };
    constexpr std::array<Stage, 7> stages{{{1, 3, 1, 32, 16, 1},
                                           {6, 3, 2, 16, 24, 2},
                                           {6, 5, 2, 24, 40, 2},
                                           {6, 3, 2, 40, 80, 3},
                                           {6, 5, 1, 80, 112, 3},
                                           {6, 5, 2, 112, 192, 4},
                                           {6, 3, 1, 192, 320, 1}}};
    stem_ = ConvBnAct(params_, "features.0", 3, 32, 3, 2, 1, ConvBnAct::Act::silu);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto& st = stages[s];
      for (int b = 0; b < st.layers; ++b) {
        const std::string prefix = "features." + std::to_string(s + 1) + "." + std::to_string(b);
        blocks_.emplace_back(params_, prefix, st.expand, st.kernel, b == 0 ? st.stride : 1,
                             b == 0 ? st.in : st.out, st.out);
      }
    }
    top_ = ConvBnAct(params_, "features.8", 320, 1280, 1, 1, 1, ConvBnAct::Act::silu);
  }

protected:
  std::vector<float> forward(Tensor x) const override {
    x = stem_(x);
    for (const auto& b : blocks_) x = b(x);
    x = top_(x);
    return nn::global_avg_pool(x);
  }

private:
  ConvBnAct stem_, top_;
  std::vector<MBConv> blocks_;
};

// --- ResNet-50 ------------------------------------------------------------------

struct Bottleneck {
  Conv2d conv1, conv2, conv3;
  BatchNorm2d bn1, bn2, bn3;
  bool has_downsample = false;
  Conv2d down_conv;
  BatchNorm2d down_bn;

  Bottleneck(ParamSet& ps, const std::string& p, int in, int width, int stride)
      : conv1(ps, p + ".conv1", in, width, 1, 1, 0),
        conv2(ps, p + ".conv2", width, width, 3, stride, 1),
        conv3(ps, p + ".conv3", width, width * 4, 1, 1, 0),
        bn1(ps, p + ".bn1", width),
        bn2(ps, p + ".bn2", width),
        bn3(ps, p + ".bn3", width * 4) {
    if (stride != 1 || in != width * 4) {
      has_downsample = true;
      down_conv = Conv2d(ps, p + ".downsample.0", in, width * 4, 1, stride, 0);
      down_bn = BatchNorm2d(ps, p + ".downsample.1", width * 4);
    }
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = conv1(x);
    bn1.apply(y);
    nn::relu(y);
    y = conv2(y);
    bn2.apply(y);
    nn::relu(y);
    y = conv3(y);
    bn3.apply(y);
    if (has_downsample) {
      Tensor id = down_conv(x);
      down_bn.apply(id);
      nn::add_inplace(y, id);
    } else {
      nn::add_inplace(y, x);
    }
    nn::relu(y);
    return y;
  }
};

class ResNet50 final : public CheckpointBackbone {
public:
  ResNet50() : CheckpointBackbone("resnet50", 2048) {
    conv1_ = Conv2d(params_, "conv1", 3, 64, 7, 2, 3);
    bn1_ = BatchNorm2d(params_, "bn1", 64);
    constexpr std::array<int, 4> depth{3, 4, 6, 3};
    constexpr std::array<int, 4> width{64, 128, 256, 512};
    int in = 64;
    for (int l = 0; l < 4; ++l) {
      for (int b = 0; b < depth[l]; ++b) {
        const int stride = (b == 0 && l > 0) ? 2 : 1;
        blocks_.emplace_back(params_,
                             "layer" + std::to_string(l + 1) + "." + std::to_string(b), in,
                             width[l], stride);
        in = width[l] * 4;
      }
    }
  }

protected:
  std::vector<float> forward(Tensor x) const override {
    x = conv1_(x);
    bn1_.apply(x);
    nn::relu(x);
    x = nn::max_pool(x, 3, 2, 1);
    for (const auto& b : blocks_) x = b(x);
    return nn::global_avg_pool(x);
  }

private:
  Conv2d conv1_;
  BatchNorm2d bn1_;
  std::vector<Bottleneck> blocks_;
};

// --- ViT-B/16 -------------------------------------------------------------------

struct EncoderBlock {
  nn::LayerNorm ln1, ln2;
  nn::Param* in_proj_weight;
  nn::Param* in_proj_bias;
  nn::Linear out_proj, mlp1, mlp2;
  int dim, heads;

  EncoderBlock(ParamSet& ps, const std::string& p, int d, int h, int mlp_dim)
      : ln1(ps, p + ".ln_1", d, 1e-6f),
        ln2(ps, p + ".ln_2", d, 1e-6f),
        in_proj_weight(ps.add(p + ".self_attention.in_proj_weight", {3 * d, d})),
        in_proj_bias(ps.add(p + ".self_attention.in_proj_bias", {3 * d})),
        out_proj(ps, p + ".self_attention.out_proj", d, d),
        mlp1(ps, p + ".mlp.0", d, mlp_dim),
        mlp2(ps, p + ".mlp.3", mlp_dim, d),
        dim(d),
        heads(h) {}

  RowMatrix attention(const RowMatrix& x) const {
    Eigen::Map<const RowMatrix> w(in_proj_weight->data(), 3 * dim, dim);
    Eigen::Map<const Eigen::RowVectorXf> b(in_proj_bias->data(), 3 * dim);
    RowMatrix qkv = x * w.transpose();
    qkv.rowwise() += b;
    const auto tokens = x.rows();
    const int hd = dim / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    RowMatrix ctx(tokens, dim);
    for (int h = 0; h < heads; ++h) {
      const RowMatrix q = qkv.middleCols(h * hd, hd);
      const RowMatrix k = qkv.middleCols(dim + h * hd, hd);
      const RowMatrix v = qkv.middleCols(2 * dim + h * hd, hd);
      RowMatrix s = (q * k.transpose()) * scale;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const float m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      ctx.middleCols(h * hd, hd) = s * v;
    }
    return out_proj(ctx);
  }

  RowMatrix operator()(const RowMatrix& x) const {
    RowMatrix y = x + attention(ln1(x));
    RowMatrix m = mlp1(ln2(y));
    nn::gelu(m);
    return y + mlp2(m);
  }
};

class VitB16 final : public CheckpointBackbone {
public:
  static constexpr int image_size = 224;
  static constexpr int patch = 16;
  static constexpr int dim = 768;

  VitB16() : CheckpointBackbone("vit_b_16", dim) {
    constexpr int grid = image_size / patch;
    conv_proj_ = Conv2d(params_, "conv_proj", 3, dim, patch, patch, 0, 1, true);
    class_token_ = params_.add("class_token", {1, 1, dim});
    pos_embedding_ = params_.add("encoder.pos_embedding", {1, grid * grid + 1, dim});
    for (int i = 0; i < 12; ++i) {
      layers_.emplace_back(params_, "encoder.layers.encoder_layer_" + std::to_string(i), dim, 12,
                           3072);
    }
    ln_ = nn::LayerNorm(params_, "encoder.ln", dim, 1e-6f);
  }

protected:
  std::vector<float> forward(Tensor x) const override {
    x = nn::resize_bilinear(x, image_size, image_size);
    const Tensor p = conv_proj_(x);
    const int n = p.h * p.w;
    RowMatrix tokens(n + 1, dim);
    tokens.row(0) = Eigen::Map<const Eigen::RowVectorXf>(class_token_->data(), dim);
    tokens.bottomRows(n) = p.matrix().transpose();
    tokens += Eigen::Map<const RowMatrix>(pos_embedding_->data(), n + 1, dim);
    for (const auto& layer : layers_) tokens = layer(tokens);
    const RowMatrix out = ln_(tokens.topRows(1));
    return {out.data(), out.data() + dim};
  }

private:
  Conv2d conv_proj_;
  nn::Param* class_token_ = nullptr;
  nn::Param* pos_embedding_ = nullptr;
  std::vector<EncoderBlock> layers_;
  nn::LayerNorm ln_;
};

// --- toy ------------------------------------------------------------------------

class ToyBackbone final : public Backbone {
public:
  static constexpr int stats = 12;
  static constexpr std::uint64_t projection_seed = 20240301;

  ToyBackbone() : name_(toy_backbone_name), projection_(toy_embedding_dim, stats) {
    std::mt19937_64 rng(projection_seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(stats)));
    for (int r = 0; r < toy_embedding_dim; ++r) {
      for (int c = 0; c < stats; ++c) projection_(r, c) = normal(rng);
    }
  }

  const std::string& name() const noexcept override { return name_; }
  int embedding_dim() const noexcept override { return toy_embedding_dim; }
  std::int64_t param_count(int num_classes) const override {
    return static_cast<std::int64_t>(toy_embedding_dim) * stats +
           head_params(toy_embedding_dim, num_classes);
  }
  bool initialized() const noexcept override { return true; }
  void load_weights(const nn::WeightMap&) override {}

  // Per channel: mean, standard deviation, mean |horizontal gradient|,
  // mean |vertical gradient|, all in units of full scale.
  std::vector<float> features(const raster::ImagePatch& patch) const override {
    constexpr int n = raster::patch_size;
    Eigen::VectorXd s(stats);
    for (int ch = 0; ch < 3; ++ch) {
      double sum = 0, sq = 0, gx = 0, gy = 0;
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          const double v = patch.at(r, c, ch) / 255.0;
          sum += v;
          sq += v * v;
          if (c + 1 < n) gx += std::abs(patch.at(r, c + 1, ch) / 255.0 - v);
          if (r + 1 < n) gy += std::abs(patch.at(r + 1, c, ch) / 255.0 - v);
        }
      }
      const double count = n * n;
      const double mean = sum / count;
      s(ch * 4 + 0) = mean;
      s(ch * 4 + 1) = std::sqrt(std::max(0.0, sq / count - mean * mean));
      s(ch * 4 + 2) = gx / (n * (n - 1));
      s(ch * 4 + 3) = gy / (n * (n - 1));
    }
    const Eigen::VectorXd e = projection_ * s;
    return {e.data(), e.data() + e.size()};
  }

private:
  std::string name_;
  Eigen::MatrixXd projection_;
};

}  // namespace

std::vector<std::string> registered_backbones() {
  return {"efficientnet_b0", "resnet50", "vit_b_16", std::string(toy_backbone_name)};
}

std::unique_ptr<Backbone> make_backbone(std::string_view name) {
  if (name == "efficientnet_b0") return std::make_unique<EfficientNetB0>();
  if (name == "resnet50") return std::make_unique<ResNet50>();
  if (name == "vit_b_16") return std::make_unique<VitB16>();
  if (name == toy_backbone_name) return std::make_unique<ToyBackbone>();
  throw Error(ErrorCode::registry, "unknown backbone '" + std::string(name) + "'");
}

std::unique_ptr<Backbone> load_backbone(const BackboneSpec& spec) {
  auto backbone = make_backbone(spec.name);
  if (!spec.weights_ref.empty()) backbone->load_weights(nn::read_weights(spec.weights_ref));
  return backbone;
}

BackboneSpec describe(std::string_view name) {
  const auto backbone = make_backbone(name);
  return {backbone->name(), backbone->embedding_dim(), backbone->param_count(eurosat_classes), {}};
}

std::int64_t param_count(const BackboneSpec& spec, int num_classes) {
  return make_backbone(spec.name)->param_count(num_classes);
}

}  // namespace geokpi::vision
