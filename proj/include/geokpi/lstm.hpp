#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geokpi/kpi.hpp"

namespace geokpi::forecast {

struct TrainingConfig {
  int hidden_size = 64;
  int layers = 1;
  int epochs = 30;
  double learning_rate = 0.1;
  /// Multiplies the step size after every epoch.
  double lr_decay = 0.95;
  int batch_size = 32;
  /// "sgd" (fixed step, heavy-ball momentum) or "adam".
  std::string optimizer = "sgd";
  double momentum = 0.9;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  std::uint64_t seed = 7;
};

/// Stacked LSTM over a univariate history with a dense head emitting the
/// whole horizon at once.
class LstmNetwork {
public:
  using Matrix = Eigen::MatrixXf;
  using Vector = Eigen::VectorXf;

  struct Layer {
    Matrix w_ih;  ///< 4H x in, gate order i, f, g, o
    Matrix w_hh;  ///< 4H x H
    Vector bias;  ///< 4H
  };

  LstmNetwork() = default;
  LstmNetwork(int hidden_size, int layers, std::uint64_t seed);

  int hidden_size() const noexcept { return hidden_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  Matrix& head_weight() noexcept { return head_w_; }
  Vector& head_bias() noexcept { return head_b_; }
  const Matrix& head_weight() const noexcept { return head_w_; }
  const Vector& head_bias() const noexcept { return head_b_; }

  /// Histories as columns (96 x B) -> forecasts as columns (32 x B).
  Matrix forward(const Matrix& histories) const;

  /// Mean squared error of one batch and its gradient, in the same layout
  /// as the parameters.
  struct Gradients {
    std::vector<Layer> layers;
    Matrix head_w;
    Vector head_b;
  };
  float loss_and_gradients(const Matrix& histories, const Matrix& targets, Gradients& grads) const;

  std::size_t parameter_count() const noexcept;

  /// Flat views used by the optimizers; order is stable.
  std::vector<Eigen::Map<Vector>> parameter_views();
  static std::vector<Eigen::Map<Vector>> gradient_views(Gradients& g);

private:
  int hidden_ = 0;
  std::vector<Layer> layers_;
  Matrix head_w_;  ///< 32 x H
  Vector head_b_;  ///< 32
};

/// Mini-batch trainer; returns the mean training loss of every epoch.
std::vector<double> train_network(LstmNetwork& net, const kpi::WindowSet& windows,
                                  const TrainingConfig& config);

}  // namespace geokpi::forecast
