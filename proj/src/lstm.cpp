#include "geokpi/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geokpi/errors.hpp"

namespace geokpi::forecast {

namespace {

using Matrix = LstmNetwork::Matrix;
using Vector = LstmNetwork::Vector;

void sigmoid_inplace(Eigen::Ref<Matrix> m) {
  m = (1.0f + (-m.array()).exp()).inverse().matrix();
}

// Activations of one layer at one time step, kept for backpropagation.
struct StepCache {
  Matrix i, f, g, o, c, tanh_c, h;
};

}  // namespace

LstmNetwork::LstmNetwork(int hidden_size, int layers, std::uint64_t seed) : hidden_(hidden_size) {
  if (hidden_size < 1 || layers < 1) {
    throw Error(ErrorCode::validation, "hidden size and layer count must be positive");
  }
  std::mt19937_64 rng(seed);
  const float bound = 1.0f / std::sqrt(static_cast<float>(hidden_size));
  std::uniform_real_distribution<float> u(-bound, bound);
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  for (int l = 0; l < layers; ++l) {
    Layer layer;
    const int in = l == 0 ? 1 : hidden_size;
    layer.w_ih.resize(4 * hidden_size, in);
    layer.w_hh.resize(4 * hidden_size, hidden_size);
    layer.bias.resize(4 * hidden_size);
    fill(layer.w_ih);
    fill(layer.w_hh);
    fill(layer.bias);
    // forget gate starts open
    layer.bias.segment(hidden_size, hidden_size).array() += 1.0f;
    layers_.push_back(std::move(layer));
  }
  head_w_.resize(kpi::horizon_length, hidden_size);
  head_b_.resize(kpi::horizon_length);
  fill(head_w_);
  fill(head_b_);
}

Matrix LstmNetwork::forward(const Matrix& histories) const {
  const auto batch = histories.cols();
  const auto steps = histories.rows();
  const int h = hidden_;
  Matrix seq = histories;  // (in * steps) x B, for layer 0 in = 1
  Matrix hs, cs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const auto in = L.w_ih.cols();
    hs = Matrix::Zero(h, batch);
    cs = Matrix::Zero(h, batch);
    Matrix out(h * steps, batch);
    Matrix z(4 * h, batch);
    for (Eigen::Index t = 0; t < steps; ++t) {
      z.noalias() = L.w_ih * seq.middleRows(t * in, in);
      z.noalias() += L.w_hh * hs;
      z.colwise() += L.bias;
      sigmoid_inplace(z.topRows(2 * h));
      z.middleRows(2 * h, h) = z.middleRows(2 * h, h).array().tanh().matrix();
      sigmoid_inplace(z.bottomRows(h));
      cs = z.middleRows(h, h).cwiseProduct(cs) + z.topRows(h).cwiseProduct(z.middleRows(2 * h, h));
      hs = z.bottomRows(h).cwiseProduct(cs.array().tanh().matrix());
      out.middleRows(t * h, h) = hs;
    }
    seq = std::move(out);
  }
  Matrix y = head_w_ * hs;
  y.colwise() += head_b_;
  return y;
}

float LstmNetwork::loss_and_gradients(const Matrix& histories, const Matrix& targets,
                                      Gradients& grads) const {
  const auto batch = histories.cols();
  const auto steps = histories.rows();
  const int h = hidden_;
  const auto n_layers = layers_.size();

  // forward with caches
  std::vector<std::vector<StepCache>> cache(n_layers, std::vector<StepCache>(steps));
  const Matrix* seq = &histories;
  std::vector<Matrix> layer_out(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& L = layers_[l];
    const auto in = L.w_ih.cols();
    Matrix hs = Matrix::Zero(h, batch);
    Matrix cs = Matrix::Zero(h, batch);
    Matrix z(4 * h, batch);
    layer_out[l].resize(h * steps, batch);
    for (Eigen::Index t = 0; t < steps; ++t) {
      z.noalias() = L.w_ih * seq->middleRows(t * in, in);
      z.noalias() += L.w_hh * hs;
      z.colwise() += L.bias;
      auto& s = cache[l][t];
      s.i = z.topRows(h);
      s.f = z.middleRows(h, h);
      s.g = z.middleRows(2 * h, h).array().tanh().matrix();
      s.o = z.bottomRows(h);
      sigmoid_inplace(s.i);
      sigmoid_inplace(s.f);
      sigmoid_inplace(s.o);
      cs = s.f.cwiseProduct(cs) + s.i.cwiseProduct(s.g);
      s.c = cs;
      s.tanh_c = cs.array().tanh().matrix();
      hs = s.o.cwiseProduct(s.tanh_c);
      s.h = hs;
      layer_out[l].middleRows(t * h, h) = hs;
    }
    seq = &layer_out[l];
  }
  const Matrix& h_last = cache.back()[steps - 1].h;
  Matrix y = head_w_ * h_last;
  y.colwise() += head_b_;
  const Matrix err = y - targets;
  const float denom = static_cast<float>(err.size());
  const float loss = err.squaredNorm() / denom;

  // backward
  grads.layers.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    grads.layers[l].w_ih = Matrix::Zero(layers_[l].w_ih.rows(), layers_[l].w_ih.cols());
    grads.layers[l].w_hh = Matrix::Zero(layers_[l].w_hh.rows(), layers_[l].w_hh.cols());
    grads.layers[l].bias = Vector::Zero(layers_[l].bias.size());
  }
  const Matrix dy = (2.0f / denom) * err;
  grads.head_w.noalias() = dy * h_last.transpose();
  grads.head_b = dy.rowwise().sum();

  // dh arriving at each step of the current layer from the layer above
  Matrix from_above = Matrix::Zero(h * steps, batch);
  from_above.middleRows((steps - 1) * h, h) = head_w_.transpose() * dy;

  Matrix dz(4 * h, batch);
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& L = layers_[li];
    auto& G = grads.layers[li];
    const auto in = L.w_ih.cols();
    const Matrix& input = li == 0 ? histories : layer_out[li - 1];
    Matrix to_below = li > 0 ? Matrix::Zero(in * steps, batch) : Matrix();
    Matrix dh = Matrix::Zero(h, batch);
    Matrix dc = Matrix::Zero(h, batch);
    const Matrix zeros = Matrix::Zero(h, batch);
    for (Eigen::Index t = steps; t-- > 0;) {
      const auto& s = cache[li][t];
      const Matrix& c_prev = t > 0 ? cache[li][t - 1].c : zeros;
      const Matrix& h_prev = t > 0 ? cache[li][t - 1].h : zeros;
      dh += from_above.middleRows(t * h, h);
      const auto d_o = dh.cwiseProduct(s.tanh_c);
      dc += dh.cwiseProduct(s.o).cwiseProduct(
          (1.0f - s.tanh_c.array().square()).matrix());
      dz.topRows(h) = dc.cwiseProduct(s.g).cwiseProduct(
          s.i.cwiseProduct((1.0f - s.i.array()).matrix()));
      dz.middleRows(h, h) = dc.cwiseProduct(c_prev).cwiseProduct(
          s.f.cwiseProduct((1.0f - s.f.array()).matrix()));
      dz.middleRows(2 * h, h) = dc.cwiseProduct(s.i).cwiseProduct(
          (1.0f - s.g.array().square()).matrix());
      dz.bottomRows(h) = d_o.cwiseProduct(s.o.cwiseProduct((1.0f - s.o.array()).matrix()));
      dc = dc.cwiseProduct(s.f).eval();

      G.w_ih.noalias() += dz * input.middleRows(t * in, in).transpose();
      if (t > 0) G.w_hh.noalias() += dz * h_prev.transpose();
      G.bias += dz.rowwise().sum();
      dh.noalias() = L.w_hh.transpose() * dz;
      if (li > 0) to_below.middleRows(t * in, in).noalias() = L.w_ih.transpose() * dz;
    }
    from_above = std::move(to_below);
  }
  return loss;
}

std::size_t LstmNetwork::parameter_count() const noexcept {
  std::size_t n = static_cast<std::size_t>(head_w_.size() + head_b_.size());
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.w_ih.size() + l.w_hh.size() + l.bias.size());
  return n;
}

std::vector<Eigen::Map<Vector>> LstmNetwork::parameter_views() {
  std::vector<Eigen::Map<Vector>> v;
  for (auto& l : layers_) {
    v.emplace_back(l.w_ih.data(), l.w_ih.size());
    v.emplace_back(l.w_hh.data(), l.w_hh.size());
    v.emplace_back(l.bias.data(), l.bias.size());
  }
  v.emplace_back(head_w_.data(), head_w_.size());
  v.emplace_back(head_b_.data(), head_b_.size());
  return v;
}

std::vector<Eigen::Map<Vector>> LstmNetwork::gradient_views(Gradients& g) {
  std::vector<Eigen::Map<Vector>> v;
  for (auto& l : g.layers) {
    v.emplace_back(l.w_ih.data(), l.w_ih.size());
    v.emplace_back(l.w_hh.data(), l.w_hh.size());
    v.emplace_back(l.bias.data(), l.bias.size());
  }
  v.emplace_back(g.head_w.data(), g.head_w.size());
  v.emplace_back(g.head_b.data(), g.head_b.size());
  return v;
}

std::vector<double> train_network(LstmNetwork& net, const kpi::WindowSet& windows,
                                  const TrainingConfig& config) {
  if (config.batch_size < 1) throw Error(ErrorCode::validation, "batch_size must be positive");
  if (config.optimizer != "adam" && config.optimizer != "sgd") {
    throw Error(ErrorCode::validation, "unknown optimizer '" + config.optimizer + "'");
  }
  std::vector<double> history;
  const std::size_t n = windows.size();
  if (config.epochs <= 0 || n == 0) return history;

  auto params = net.parameter_views();
  std::vector<Vector> m1, m2;
  for (const auto& p : params) {
    m1.push_back(Vector::Zero(p.size()));
    m2.push_back(Vector::Zero(p.size()));
  }
  constexpr float beta1 = 0.9f, beta2 = 0.999f, adam_eps = 1e-8f;
  const auto momentum = static_cast<float>(config.momentum);
  long step = 0;

  std::mt19937_64 rng(config.seed ^ 0x5deece66dull);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double lr = config.learning_rate;
  LstmNetwork::Gradients grads;
  Matrix x, y;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const auto b = static_cast<Eigen::Index>(end - start);
      x.resize(kpi::history_length, b);
      y.resize(kpi::horizon_length, b);
      for (Eigen::Index j = 0; j < b; ++j) {
        const auto w = order[start + j];
        for (int t = 0; t < kpi::history_length; ++t) x(t, j) = static_cast<float>(windows.input(w)[t]);
        for (int t = 0; t < kpi::horizon_length; ++t) y(t, j) = static_cast<float>(windows.target(w)[t]);
      }
      epoch_loss += net.loss_and_gradients(x, y, grads) * static_cast<double>(b);
      auto gv = LstmNetwork::gradient_views(grads);

      float scale = 1.0f;
      if (config.grad_clip > 0) {
        double norm2 = 0.0;
        for (const auto& g : gv) norm2 += g.squaredNorm();
        const double norm = std::sqrt(norm2);
        if (norm > config.grad_clip) scale = static_cast<float>(config.grad_clip / norm);
      }
      ++step;
      const auto flr = static_cast<float>(lr);
      for (std::size_t k = 0; k < params.size(); ++k) {
        const Vector g = gv[k] * scale;
        if (config.optimizer == "adam") {
          m1[k] = beta1 * m1[k] + (1 - beta1) * g;
          m2[k] = beta2 * m2[k] + (1 - beta2) * g.cwiseAbs2();
          const float c1 = 1.0f - std::pow(beta1, static_cast<float>(step));
          const float c2 = 1.0f - std::pow(beta2, static_cast<float>(step));
          params[k].array() -=
              flr * (m1[k].array() / c1) / ((m2[k].array() / c2).sqrt() + adam_eps);
        } else {
          m1[k] = momentum * m1[k] + g;
          params[k] -= flr * m1[k];
        }
      }
    }
    history.push_back(epoch_loss / static_cast<double>(n));
    lr *= config.lr_decay;
  }
  return history;
}

}  // namespace geokpi::forecast
