#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lasttok/compute/graph.hpp"

namespace lasttok::compute {

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  std::size_t samples = 100;
  double step = 1e-5;
  double tolerance = 1e-3;
  /// Denominator floor: |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of loss_fn against central differences on
/// randomly sampled coordinates of the trainable parameters. loss_fn must be a
/// pure function of the parameter values.
GradCheckReport grad_check(std::span<const ParamPtr> params, const std::function<Var()>& loss_fn,
                           const GradCheckOptions& options);

}  // namespace lasttok::compute
