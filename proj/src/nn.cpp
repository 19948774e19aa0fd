#include "geokpi/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "geokpi/errors.hpp"

namespace geokpi::nn {

std::int64_t Param::numel() const noexcept {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// --- checkpoint files ---------------------------------------------------------

namespace {

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::io, path.string() + ": truncated weight file");
  return v;
}

}  // namespace

WeightMap read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::not_initialized, "weights not found: '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GKW1", 4) != 0) {
    throw Error(ErrorCode::io, path.string() + ": not a GKW1 weight file");
  }
  WeightMap out;
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = get<std::uint32_t>(in, path);
    NamedArray arr;
    std::int64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      arr.shape.push_back(get<std::int64_t>(in, path));
      n *= arr.shape.back();
    }
    arr.values.resize(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(arr.values.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw Error(ErrorCode::io, path.string() + ": truncated weight file");
    out.emplace(std::move(name), std::move(arr));
  }
  return out;
}

void write_weights(const std::filesystem::path& path, const WeightMap& weights) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
  out.write("GKW1", 4);
  put(out, static_cast<std::uint32_t>(weights.size()));
  for (const auto& [name, arr] : weights) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint32_t>(arr.shape.size()));
    for (auto d : arr.shape) put(out, d);
    out.write(reinterpret_cast<const char*>(arr.values.data()),
              static_cast<std::streamsize>(arr.values.size() * sizeof(float)));
  }
}

// --- parameter registry -------------------------------------------------------

Param* ParamSet::add(std::string name, std::vector<std::int64_t> shape, bool trainable) {
  params_.push_back(Param{std::move(name), std::move(shape), trainable, {}});
  return &params_.back();
}

std::int64_t ParamSet::trainable_count() const noexcept {
  std::int64_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.numel();
  }
  return n;
}

void ParamSet::load(const WeightMap& weights) {
  for (auto& p : params_) {
    const auto it = weights.find(p.name);
    if (it == weights.end()) {
      throw Error(ErrorCode::not_initialized, "missing weight '" + p.name + "'");
    }
    if (static_cast<std::int64_t>(it->second.values.size()) != p.numel()) {
      throw Error(ErrorCode::shape, "weight '" + p.name + "' has " +
                                        std::to_string(it->second.values.size()) +
                                        " values, expected " + std::to_string(p.numel()));
    }
    if (it->second.shape != p.shape) {
      throw Error(ErrorCode::shape, "weight '" + p.name + "' has a different shape");
    }
  }
  for (auto& p : params_) p.value = weights.at(p.name).values;
  loaded_ = true;
}

// --- layers -------------------------------------------------------------------

Conv2d::Conv2d(ParamSet& ps, const std::string& prefix, int in_ch, int out_ch, int k, int s,
               int p, int g, bool with_bias)
    : in(in_ch), out(out_ch), kernel(k), stride(s), pad(p), groups(g) {
  weight = ps.add(prefix + ".weight", {out_ch, in_ch / g, k, k});
  if (with_bias) bias = ps.add(prefix + ".bias", {out_ch});
}

Tensor Conv2d::operator()(const Tensor& x) const {
  const int oh = (x.h + 2 * pad - kernel) / stride + 1;
  const int ow = (x.w + 2 * pad - kernel) / stride + 1;
  Tensor y(out, oh, ow);
  const float* wdata = weight->data();

  if (groups == 1) {
    const int kk = in * kernel * kernel;
    Eigen::Map<const RowMatrix> w(wdata, out, kk);
    if (kernel == 1 && stride == 1 && pad == 0) {
      y.matrix().noalias() = w * x.matrix();
    } else {
      RowMatrix cols(kk, oh * ow);
      for (int c = 0; c < in; ++c) {
        const float* src = x.channel(c);
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) {
            float* dst = cols.row((c * kernel + ky) * kernel + kx).data();
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride - pad + ky;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * stride - pad + kx;
                dst[oy * ow + ox] =
                    (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w) ? src[iy * x.w + ix] : 0.0f;
              }
            }
          }
        }
      }
      y.matrix().noalias() = w * cols;
    }
  } else if (groups == in && groups == out) {
    for (int c = 0; c < in; ++c) {
      const float* src = x.channel(c);
      const float* kw = wdata + static_cast<std::size_t>(c) * kernel * kernel;
      float* dst = y.channel(c);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          float acc = 0.0f;
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= x.w) continue;
              acc += kw[ky * kernel + kx] * src[iy * x.w + ix];
            }
          }
          dst[oy * ow + ox] = acc;
        }
      }
    }
  } else {
    throw Error(ErrorCode::validation, "only dense and depthwise convolutions are supported");
  }

  if (bias != nullptr) {
    for (int c = 0; c < out; ++c) {
      const float b = bias->value[c];
      float* dst = y.channel(c);
      for (int i = 0; i < oh * ow; ++i) dst[i] += b;
    }
  }
  return y;
}

BatchNorm2d::BatchNorm2d(ParamSet& ps, const std::string& prefix, int channels, float e)
    : eps(e) {
  gamma = ps.add(prefix + ".weight", {channels});
  beta = ps.add(prefix + ".bias", {channels});
  mean = ps.add(prefix + ".running_mean", {channels}, false);
  var = ps.add(prefix + ".running_var", {channels}, false);
}

void BatchNorm2d::apply(Tensor& x) const {
  const int n = x.h * x.w;
  for (int c = 0; c < x.c; ++c) {
    const float scale = gamma->value[c] / std::sqrt(var->value[c] + eps);
    const float shift = beta->value[c] - mean->value[c] * scale;
    float* p = x.channel(c);
    for (int i = 0; i < n; ++i) p[i] = p[i] * scale + shift;
  }
}

Linear::Linear(ParamSet& ps, const std::string& prefix, int in_f, int out_f)
    : in(in_f), out(out_f) {
  weight = ps.add(prefix + ".weight", {out_f, in_f});
  bias = ps.add(prefix + ".bias", {out_f});
}

RowMatrix Linear::operator()(const RowMatrix& x) const {
  Eigen::Map<const RowMatrix> w(weight->data(), out, in);
  Eigen::Map<const Eigen::RowVectorXf> b(bias->data(), out);
  RowMatrix y = x * w.transpose();
  y.rowwise() += b;
  return y;
}

LayerNorm::LayerNorm(ParamSet& ps, const std::string& prefix, int dim, float e) : eps(e) {
  weight = ps.add(prefix + ".weight", {dim});
  bias = ps.add(prefix + ".bias", {dim});
}

RowMatrix LayerNorm::operator()(const RowMatrix& x) const {
  const auto dim = x.cols();
  Eigen::Map<const Eigen::RowVectorXf> g(weight->data(), dim);
  Eigen::Map<const Eigen::RowVectorXf> b(bias->data(), dim);
  RowMatrix y(x.rows(), dim);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float mu = x.row(r).mean();
    const float var = (x.row(r).array() - mu).square().mean();
    const float inv = 1.0f / std::sqrt(var + eps);
    y.row(r) = ((x.row(r).array() - mu) * inv).matrix().cwiseProduct(g) + b;
  }
  return y;
}

void relu(Tensor& x) noexcept {
  for (auto& v : x.data) v = std::max(v, 0.0f);
}

void silu(Tensor& x) noexcept {
  for (auto& v : x.data) v = v / (1.0f + std::exp(-v));
}

void gelu(RowMatrix& x) noexcept {
  constexpr float inv_sqrt2 = 0.70710678118654752f;
  x = x.unaryExpr([](float v) { return 0.5f * v * (1.0f + std::erf(v * inv_sqrt2)); });
}

Tensor max_pool(const Tensor& x, int kernel, int stride, int pad) {
  const int oh = (x.h + 2 * pad - kernel) / stride + 1;
  const int ow = (x.w + 2 * pad - kernel) / stride + 1;
  Tensor y(x.c, oh, ow);
  for (int c = 0; c < x.c; ++c) {
    const float* src = x.channel(c);
    float* dst = y.channel(c);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float m = -std::numeric_limits<float>::infinity();
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            m = std::max(m, src[iy * x.w + ix]);
          }
        }
        dst[oy * ow + ox] = m;
      }
    }
  }
  return y;
}

std::vector<float> global_avg_pool(const Tensor& x) {
  std::vector<float> out(static_cast<std::size_t>(x.c));
  const int n = x.h * x.w;
  for (int c = 0; c < x.c; ++c) {
    const float* p = x.channel(c);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += p[i];
    out[c] = static_cast<float>(s / n);
  }
  return out;
}

void add_inplace(Tensor& x, const Tensor& y) {
  if (x.data.size() != y.data.size()) throw Error(ErrorCode::shape, "residual shape mismatch");
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += y.data[i];
}

Tensor resize_bilinear(const Tensor& x, int height, int width) {
  Tensor y(x.c, height, width);
  const float sy = static_cast<float>(x.h) / height;
  const float sx = static_cast<float>(x.w) / width;
  for (int oy = 0; oy < height; ++oy) {
    const float fy = std::max(0.0f, (oy + 0.5f) * sy - 0.5f);
    const int y0 = std::min(static_cast<int>(fy), x.h - 1);
    const int y1 = std::min(y0 + 1, x.h - 1);
    const float ly = fy - y0;
    for (int ox = 0; ox < width; ++ox) {
      const float fx = std::max(0.0f, (ox + 0.5f) * sx - 0.5f);
      const int x0 = std::min(static_cast<int>(fx), x.w - 1);
      const int x1 = std::min(x0 + 1, x.w - 1);
      const float lx = fx - x0;
      for (int c = 0; c < x.c; ++c) {
        const float* p = x.channel(c);
        const float top = (1 - lx) * p[y0 * x.w + x0] + lx * p[y0 * x.w + x1];
        const float bot = (1 - lx) * p[y1 * x.w + x0] + lx * p[y1 * x.w + x1];
        y.channel(c)[oy * width + ox] = (1 - ly) * top + ly * bot;
      }
    }
  }
  return y;
}

}  // namespace geokpi::nn
