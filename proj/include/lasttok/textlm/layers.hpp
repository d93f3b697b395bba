#pragma once

#include <string>
#include <vector>

#include "lasttok/compute/graph.hpp"
#include "lasttok/compute/rng.hpp"

namespace lasttok::textlm {

using compute::ParamPtr;
using compute::Var;

/// Owning list of parameters with hierarchical names.
class ParamList {
 public:
  ParamPtr add(std::string name, compute::Tensor value, bool trainable = true);
  void append(const std::vector<ParamPtr>& more) { items_.insert(items_.end(), more.begin(), more.end()); }
  const std::vector<ParamPtr>& items() const { return items_; }

 private:
  std::vector<ParamPtr> items_;
};

void set_trainable(const std::vector<ParamPtr>& params, bool trainable);
std::size_t parameter_count(const std::vector<ParamPtr>& params);

compute::Tensor normal_tensor(compute::Shape shape, double stddev, Rng& rng);

struct Linear {
  ParamPtr weight;  // in x out
  ParamPtr bias;    // out

  /// weight ~ N(0, init_scale^2 / in); init_scale = 0 gives zeros.
  static Linear make(ParamList& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                     double init_scale = 1.0);
  Var operator()(const Var& x) const;
  std::size_t in() const { return weight->value.rows(); }
  std::size_t out() const { return weight->value.cols(); }
};

struct LayerNorm {
  ParamPtr gamma;
  ParamPtr beta;

  static LayerNorm make(ParamList& params, const std::string& name, std::size_t dim);
  Var operator()(const Var& x) const;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + FFN(LN(x)) with a 4x
/// GeLU feed-forward.
struct TransformerBlock {
  LayerNorm ln_attn;
  Linear wq, wk, wv, wo;
  LayerNorm ln_ff;
  Linear ff_in, ff_out;
  std::size_t heads = 1;
  bool causal = false;

  /// depth scales the residual output projections by 1/sqrt(2 depth).
  static TransformerBlock make(ParamList& params, const std::string& name, std::size_t dim, std::size_t heads,
                               bool causal, std::size_t depth, Rng& rng);
  /// valid_rows > 0 masks keys at or after that row (right padding).
  Var operator()(const Var& x, std::size_t valid_rows = 0) const;
};

Var run_blocks(const std::vector<TransformerBlock>& blocks, Var x, std::size_t valid_rows = 0);

}  // namespace lasttok::textlm
