#include "lasttok/textlm/layers.hpp"

#include <cmath>

namespace lasttok::textlm {

using compute::Tensor;

ParamPtr ParamList::add(std::string name, Tensor value, bool trainable) {
  auto p = std::make_shared<compute::Parameter>(std::move(name), std::move(value), trainable);
  items_.push_back(p);
  return p;
}

void set_trainable(const std::vector<ParamPtr>& params, bool trainable) {
  for (const auto& p : params) p->trainable = trainable;
}

std::size_t parameter_count(const std::vector<ParamPtr>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p->value.size();
  return n;
}

Tensor normal_tensor(compute::Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  if (stddev != 0.0) {
    for (auto& v : t.data()) v = stddev * rng.normal();
  }
  return t;
}

Linear Linear::make(ParamList& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                    double init_scale) {
  Linear l;
  l.weight = params.add(name + ".weight", normal_tensor({in, out}, init_scale / std::sqrt(static_cast<double>(in)), rng));
  l.bias = params.add(name + ".bias", Tensor({out}));
  return l;
}

Var Linear::operator()(const Var& x) const {
  return compute::linear(x, compute::param(weight), compute::param(bias));
}

LayerNorm LayerNorm::make(ParamList& params, const std::string& name, std::size_t dim) {
  LayerNorm ln;
  ln.gamma = params.add(name + ".gamma", Tensor({dim}, 1.0));
  ln.beta = params.add(name + ".beta", Tensor({dim}));
  return ln;
}

Var LayerNorm::operator()(const Var& x) const {
  return compute::layer_norm(x, compute::param(gamma), compute::param(beta));
}

TransformerBlock TransformerBlock::make(ParamList& params, const std::string& name, std::size_t dim,
                                        std::size_t heads, bool causal, std::size_t depth, Rng& rng) {
  const double residual = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(depth, 1)));
  TransformerBlock b;
  b.heads = heads;
  b.causal = causal;
  b.ln_attn = LayerNorm::make(params, name + ".ln_attn", dim);
  b.wq = Linear::make(params, name + ".attn.q", dim, dim, rng);
  b.wk = Linear::make(params, name + ".attn.k", dim, dim, rng);
  b.wv = Linear::make(params, name + ".attn.v", dim, dim, rng);
  b.wo = Linear::make(params, name + ".attn.out", dim, dim, rng, residual);
  b.ln_ff = LayerNorm::make(params, name + ".ln_ff", dim);
  b.ff_in = Linear::make(params, name + ".ff.in", dim, 4 * dim, rng);
  b.ff_out = Linear::make(params, name + ".ff.out", 4 * dim, dim, rng, residual);
  return b;
}

Var TransformerBlock::operator()(const Var& x, std::size_t valid_rows) const {
  const Var h = ln_attn(x);
  const compute::AttentionOptions opts{heads, causal, valid_rows};
  const Var a = wo(compute::attention(wq(h), wk(h), wv(h), opts));
  const Var x1 = compute::add(x, a);
  const Var f = ff_out(compute::gelu(ff_in(ln_ff(x1))));
  return compute::add(x1, f);
}

Var run_blocks(const std::vector<TransformerBlock>& blocks, Var x, std::size_t valid_rows) {
  for (const auto& b : blocks) x = b(x, valid_rows);
  return x;
}

}  // namespace lasttok::textlm
