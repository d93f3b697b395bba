#include "lasttok/compute/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lasttok/compute/rng.hpp"

namespace lasttok::compute {

GradCheckReport grad_check(std::span<const ParamPtr> params, const std::function<Var()>& loss_fn,
                           const GradCheckOptions& options) {
  std::vector<Parameter*> trainable;
  std::size_t total = 0;
  for (const auto& p : params) {
    if (!p->trainable) continue;
    trainable.push_back(p.get());
    total += p->value.size();
  }
  GradCheckReport report;
  report.tolerance = options.tolerance;
  if (total == 0) {
    report.passed = true;
    return report;
  }

  for (auto* p : trainable) p->zero_grad();
  backward(loss_fn());

  // Sample flat coordinates without replacement when possible.
  Rng rng(options.seed);
  std::vector<std::size_t> coords;
  if (options.samples >= total) {
    coords.resize(total);
    for (std::size_t i = 0; i < total; ++i) coords[i] = i;
  } else {
    std::vector<std::size_t> all(total);
    for (std::size_t i = 0; i < total; ++i) all[i] = i;
    for (std::size_t i = 0; i < options.samples; ++i) {
      std::swap(all[i], all[i + rng.index(total - i)]);
    }
    coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(options.samples));
  }

  NoGradGuard no_grad;
  for (std::size_t flat : coords) {
    Parameter* p = nullptr;
    std::size_t idx = flat;
    for (auto* cand : trainable) {
      if (idx < cand->value.size()) {
        p = cand;
        break;
      }
      idx -= cand->value.size();
    }
    const double saved = p->value[idx];
    p->value[idx] = saved + options.step;
    const double up = loss_fn().value().item();
    p->value[idx] = saved - options.step;
    const double down = loss_fn().value().item();
    p->value[idx] = saved;

    GradCheckEntry e;
    e.parameter = p->name;
    e.index = idx;
    e.analytic = p->grad[idx];
    e.numeric = (up - down) / (2.0 * options.step);
    const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), options.floor});
    e.relative_error = std::abs(e.analytic - e.numeric) / denom;
    report.max_relative_error = std::max(report.max_relative_error, e.relative_error);
    report.entries.push_back(std::move(e));
  }
  report.passed = report.max_relative_error <= options.tolerance;
  return report;
}

}  // namespace lasttok::compute
