#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace preflab {

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double expected = 0.0;
  double tolerance = 0.0;
  /// "abs" passes when |measured - expected| <= tolerance, "below" when
  /// measured < expected.
  std::string relation = "abs";
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  /// Overrides the IPO target inside the closed-form check. Used to prove
  /// that the suite catches a wrong loss constant.
  std::optional<double> ipo_target;
  std::size_t gradient_configs = 20;
  std::size_t rlhf_steps = 2000;
  std::uint64_t seed = 0;
};

/// Central finite differences of f at x with step h.
std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::span<const double> x, double h = 1e-5);

/// |a - b| / max(|a|, |b|) in the L2 norm (0 when both vanish).
double relative_error(std::span<const double> a, std::span<const double> b);

/// Closed-form losses, gradient checks, the KL identities, Gibbs
/// normalization and RLHF recovery of the Gibbs policy.
std::vector<CheckResult> run_verification(const VerifyOptions& opts = {},
                                          const std::function<void(const CheckResult&)>& on_check = {});

nlohmann::ordered_json to_json(const CheckResult& c);
std::string format_check(const CheckResult& c);

}  // namespace preflab
