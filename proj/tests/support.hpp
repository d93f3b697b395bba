#pragma once

#include <memory>
#include <string>

#include "lasttok/compute/graph.hpp"
#include "lasttok/compute/rng.hpp"

namespace lasttok::testing {

inline compute::Tensor random_tensor(compute::Shape shape, Rng& rng, double scale = 1.0) {
  compute::Tensor t(std::move(shape));
  for (auto& x : t.data()) x = rng.normal(0.0, scale);
  return t;
}

inline compute::ParamPtr random_param(const std::string& name, compute::Shape shape, Rng& rng, double scale = 1.0) {
  return std::make_shared<compute::Parameter>(name, random_tensor(std::move(shape), rng, scale));
}

/// sum(x * w) for a fixed random w, so every output element gets a distinct
/// upstream gradient.
inline compute::Var probe(const compute::Var& x, std::uint64_t seed = 99) {
  Rng rng(seed);
  return compute::sum(compute::mul(x, compute::constant(random_tensor(x.shape(), rng))));
}

}  // namespace lasttok::testing
