#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rrnet/tensor.hpp"

// Central finite-difference verification of reverse-mode gradients.

namespace rrnet {

struct GradCheckOptions {
  double step = 1e-5;
  /// Entries with |analytic| and |numeric| below this are compared absolutely.
  double floor = 1e-5;
  /// Entries checked per input; 0 checks all of them, otherwise a seeded sample.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  /// When positive, each entry is also differenced at step / 10. If the two
  /// estimates disagree by more than this (relative), a ReLU/clamp kink lies
  /// inside the wider stencil, which then is no valid oracle: the entry is
  /// counted as nonsmooth and compared against the narrow estimate instead.
  /// The decision never looks at the analytic gradient.
  double kink_tolerance = 0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t nonsmooth = 0;
  double max_rel_error = 0;
  std::string worst;  // "input[i] entry j: analytic a numeric n"

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

double relative_error(double analytic, double numeric, double floor);

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares backward(f(inputs)) against (f(x + h e) - f(x - h e)) / 2h for the
/// selected entries of every input. Inputs must be leaves; they are perturbed
/// in place and restored.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& opt = {});

/// Reduces any tensor to a scalar with fixed pseudo-random weights, so every
/// output entry reaches the check with a distinct cotangent.
Tensor<double> weighted_sum(const Tensor<double>& x, std::uint64_t seed = 1);

}  // namespace rrnet
