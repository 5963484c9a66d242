#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace preflab {

enum class OptimizerKind { Sgd, Momentum, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double lr = 0.1;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Rescale the gradient to this L2 norm when larger; 0 disables.
  double max_grad_norm = 0.0;
};

/// First-order optimizer. State grows with zeros when the parameter vector
/// grows (tabular policies materialize rows during training).
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  /// Descends along `grad`. Returns the L2 norm of the applied update.
  double step(std::span<double> params, std::span<const double> grad);

  const OptimizerConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr);

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

double l2_norm(std::span<const double> xs);

}  // namespace preflab
