#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace preflab {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double logsumexp(std::span<const double> xs);

/// In-place log-softmax of `logits / temperature`.
void log_softmax_inplace(std::span<double> logits, double temperature = 1.0);

std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

double mean(std::span<const double> xs);

/// Population standard deviation.
double stddev(std::span<const double> xs);

bool all_finite(std::span<const double> xs);

}  // namespace preflab
