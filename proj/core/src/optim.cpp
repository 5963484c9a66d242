#include "preflab/optim.hpp"

#include <cmath>

#include "preflab/error.hpp"

namespace preflab {

double l2_norm(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x * x;
  return std::sqrt(s);
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw ConfigError("learning rate must be positive");
}

void Optimizer::set_lr(double lr) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  cfg_.lr = lr;
}

double Optimizer::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size()) throw ConfigError("gradient and parameter sizes differ");
  if (m_.size() < params.size()) m_.resize(params.size(), 0.0);
  if (v_.size() < params.size()) v_.resize(params.size(), 0.0);
  double scale = 1.0;
  if (cfg_.max_grad_norm > 0.0) {
    const double n = l2_norm(grad);
    if (n > cfg_.max_grad_norm) scale = cfg_.max_grad_norm / n;
  }
  ++t_;
  double update_sq = 0.0;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] * scale;
    double u = 0.0;
    switch (cfg_.kind) {
      case OptimizerKind::Sgd:
        u = cfg_.lr * g;
        break;
      case OptimizerKind::Momentum:
        m_[i] = cfg_.momentum * m_[i] + g;
        u = cfg_.lr * m_[i];
        break;
      case OptimizerKind::Adam:
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        u = cfg_.lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
        break;
    }
    params[i] -= u;
    update_sq += u * u;
  }
  return std::sqrt(update_sq);
}

}  // namespace preflab
