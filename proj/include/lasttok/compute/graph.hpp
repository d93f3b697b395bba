#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a handle to a node in a dynamically recorded graph. Ops record a
// backward closure only when grad mode is on and at least one input requires a
// gradient, so frozen subgraphs and evaluation passes cost nothing extra.
// Frozen parameters still pass gradients through to their inputs; they simply
// never accumulate a gradient of their own.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lasttok/compute/tensor.hpp"

namespace lasttok::compute {

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named tensor with a gradient buffer. Modules hold these through shared
/// pointers so two modules can reference the same storage.
struct Parameter {
  Parameter(std::string name_, Tensor value_, bool trainable_ = true);

  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable;

  void zero_grad() { grad.fill(0.0); }
};

using ParamPtr = std::shared_ptr<Parameter>;

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  bool requires_grad = false;
  Parameter* param = nullptr;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  /// Accumulated gradient after backward(); empty if none reached this node.
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  const char* op() const { return node_->op; }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Leaves.
Var constant(Tensor value);
/// Leaf whose own gradient is kept (for gradient-with-respect-to-input checks).
Var input(Tensor value, bool requires_grad = true);
/// Leaf bound to a parameter; backward() accumulates into param->grad when the
/// parameter is trainable.
Var param(const ParamPtr& p);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// x·w + b with x [T x in], w [in x out], b [out].
Var linear(const Var& x, const Var& w, const Var& b);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var tanh(const Var& a);
/// tanh-approximated GeLU.
Var gelu(const Var& a);

// Row-wise.
Var softmax(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// out[i] = table[ids[i]].
Var gather_rows(const Var& table, std::span<const int> ids);

struct AttentionOptions {
  std::size_t heads = 1;
  bool causal = false;
  /// Keys at or beyond this row are masked out (right padding). 0 = all rows.
  std::size_t valid_rows = 0;
};

/// Multi-head scaled dot-product self attention over pre-projected q, k, v of
/// shape [T x D]; D must be divisible by heads.
Var attention(const Var& q, const Var& k, const Var& v, const AttentionOptions& options);

// Reductions to a scalar.
/// Mean over rows of -log softmax(logits)[row, targets[row]].
Var cross_entropy(const Var& logits, std::span<const int> targets);
/// Mean over all elements of (a - b)^2.
Var mse(const Var& a, const Var& b);
Var sum(const Var& a);
Var sum_squares(const Var& a);

// Gradient routing.
Var stop_gradient(const Var& a);
/// Forward value is q bit for bit; the upstream gradient is copied to u. With
/// grad_to_quantized the same gradient is also passed to q.
Var straight_through(const Var& u, const Var& q, bool grad_to_quantized = false);

// Shape.
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);

/// Backpropagates from a scalar. Trainable parameters reached from loss get
/// their gradient added to Parameter::grad; intermediate Vars keep theirs.
void backward(const Var& loss);

}  // namespace lasttok::compute
