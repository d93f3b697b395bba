#pragma once

#include <vector>

#include "lasttok/compute/graph.hpp"
#include "lasttok/io/archive.hpp"
#include "lasttok/train/schedule.hpp"

namespace lasttok::train {

/// Adaptive moment estimation with decoupled weight decay. Decay applies to
/// matrices only; biases, norms and other vectors are not decayed.
class AdamW {
 public:
  AdamW(std::vector<compute::ParamPtr> params, const TrainConfig& config);

  const std::vector<compute::ParamPtr>& parameters() const { return params_; }
  void zero_grad();
  /// L2 norm of all gradients.
  double grad_norm() const;
  /// Clips to config.grad_clip, then applies one update at lr. Returns the
  /// norm before clipping.
  double step(double lr);
  std::size_t steps_taken() const { return t_; }

  /// Zeroes both moments for one row of a parameter (after a reseed).
  void reset_row(const compute::Parameter& p, std::size_t row);

  void save(io::TensorArchive& archive) const;
  /// Throws MissingArtifact if the archive lacks a moment tensor.
  void load(const io::TensorArchive& archive);

 private:
  std::vector<compute::ParamPtr> params_;
  std::vector<compute::Tensor> m_;
  std::vector<compute::Tensor> v_;
  std::size_t t_ = 0;
  TrainConfig config_;
};

}  // namespace lasttok::train
