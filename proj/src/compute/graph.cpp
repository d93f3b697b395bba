#include "lasttok/compute/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "lasttok/compute/simd.hpp"

namespace lasttok::compute {

namespace {

thread_local bool t_grad_enabled = true;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

bool needs(const std::shared_ptr<Node>& n) { return n->requires_grad; }

Var make_op(const char* op, Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (t_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

}  // namespace

Parameter::Parameter(std::string name_, Tensor value_, bool trainable_)
    : name(std::move(name_)), value(std::move(value_)), grad(Tensor::zeros_like(value)), trainable(trainable_) {}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor::zeros_like(value);
  return grad;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var input(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "input";
  node->requires_grad = requires_grad && t_grad_enabled;
  return Var(std::move(node));
}

Var param(const ParamPtr& p) {
  auto node = std::make_shared<Node>();
  node->value = p->value;
  node->op = "param";
  node->requires_grad = p->trainable && t_grad_enabled;
  node->param = p.get();
  return Var(std::move(node));
}

namespace {

// dA += dC * B^T and dB += A^T * dC for C = A * B.
void matmul_backward(const Tensor& dC, Node& na, Node* nb_or_null, const Tensor& B, std::size_t m, std::size_t k,
                     std::size_t n, bool need_a) {
  if (need_a) simd::gemm_nt(m, k, n, dC.data().data(), n, B.data().data(), n, na.grad_buffer().data().data(), k);
  if (nb_or_null) {
    simd::gemm_tn(k, n, m, na.value.data().data(), k, dC.data().data(), n, nb_or_null->grad_buffer().data().data(),
                  n);
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2("matmul", A);
  require_rank2("matmul", B);
  if (A.cols() != B.rows()) shape_fail("matmul", A.shape(), B.shape());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C({m, n});
  simd::gemm(m, n, k, A.data().data(), k, B.data().data(), n, C.data().data(), n);
  return make_op("matmul", std::move(C), {a, b}, [m, k, n](Node& self) {
    auto& na = self.inputs[0];
    auto& nb = self.inputs[1];
    matmul_backward(self.grad, *na, needs(nb) ? nb.get() : nullptr, nb->value, m, k, n, needs(na));
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  require_rank2("linear", X);
  require_rank2("linear", W);
  if (X.cols() != W.rows()) shape_fail("linear", X.shape(), W.shape());
  if (B.size() != W.cols()) shape_fail("linear(bias)", W.shape(), B.shape());
  const std::size_t m = X.rows(), k = X.cols(), n = W.cols();
  Tensor Y({m, n});
  for (std::size_t i = 0; i < m; ++i) std::copy(B.data().begin(), B.data().end(), Y.row(i));
  simd::gemm(m, n, k, X.data().data(), k, W.data().data(), n, Y.data().data(), n);
  return make_op("linear", std::move(Y), {x, w, b}, [m, k, n](Node& self) {
    auto& nx = self.inputs[0];
    auto& nw = self.inputs[1];
    auto& nb = self.inputs[2];
    matmul_backward(self.grad, *nx, needs(nw) ? nw.get() : nullptr, nw->value, m, k, n, needs(nx));
    if (needs(nb)) {
      Tensor& dB = nb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) simd::axpy(1.0, self.grad.row(i), dB.data().data(), n);
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
  Tensor out = a.value();
  out.add_inplace(b.value());
  return make_op("add", std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (needs(in)) in->grad_buffer().add_inplace(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
  Tensor out = a.value();
  const auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  return make_op("sub", std::move(out), {a, b}, [](Node& self) {
    if (needs(self.inputs[0])) self.inputs[0]->grad_buffer().add_inplace(self.grad);
    if (needs(self.inputs[1])) {
      auto g = self.inputs[1]->grad_buffer().data();
      const auto d = self.grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= d[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  Tensor out = a.value();
  const auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return make_op("mul", std::move(out), {a, b}, [](Node& self) {
    const auto d = self.grad.data();
    for (int side = 0; side < 2; ++side) {
      auto& in = self.inputs[side];
      if (!needs(in)) continue;
      const auto other = self.inputs[1 - side]->value.data();
      auto g = in->grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i] * other[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return make_op("scale", std::move(out), {a}, [s](Node& self) {
    simd::axpy(s, self.grad.data().data(), self.inputs[0]->grad_buffer().data().data(), self.grad.size());
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  simd::tanh(out.data().data(), out.data().data(), out.size());
  return make_op("tanh", std::move(out), {a}, [](Node& self) {
    const auto y = self.value.data();
    const auto d = self.grad.data();
    auto g = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i] * (1.0 - y[i] * y[i]);
  });
}

Var gelu(const Var& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  const auto x = a.value().data();
  std::vector<double> t(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) t[i] = c * (x[i] + k * x[i] * x[i] * x[i]);
  simd::tanh(t.data(), t.data(), t.size());
  Tensor out(a.value().shape());
  auto o = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = 0.5 * x[i] * (1.0 + t[i]);
  return make_op("gelu", std::move(out), {a}, [t = std::move(t)](Node& self) {
    const auto x = self.inputs[0]->value.data();
    const auto d = self.grad.data();
    auto g = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double xi = x[i];
      const double dt = (1.0 - t[i] * t[i]) * c * (1.0 + 3.0 * k * xi * xi);
      g[i] += d[i] * (0.5 * (1.0 + t[i]) + 0.5 * xi * dt);
    }
  });
}

Var softmax(const Var& a) {
  const Tensor& X = a.value();
  Tensor Y = X;
  const std::size_t r = X.rows(), c = X.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double* y = Y.row(i);
    const double mx = *std::max_element(y, y + c);
    for (std::size_t j = 0; j < c; ++j) y[j] -= mx;
    simd::exp(y, y, c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += y[j];
    for (std::size_t j = 0; j < c; ++j) y[j] /= s;
  }
  return make_op("softmax", std::move(Y), {a}, [r, c](Node& self) {
    Tensor& dX = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = self.value.row(i);
      const double* dy = self.grad.row(i);
      const double inner = simd::dot(y, dy, c);
      double* dx = dX.row(i);
      for (std::size_t j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - inner);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& X = x.value();
  const std::size_t r = X.rows(), c = X.cols();
  if (gamma.value().size() != c) shape_fail("layer_norm(gamma)", X.shape(), gamma.shape());
  if (beta.value().size() != c) shape_fail("layer_norm(beta)", X.shape(), beta.shape());
  Tensor xhat({r, c});
  std::vector<double> rstd(r);
  Tensor Y({r, c});
  const auto g = gamma.value().data();
  const auto b = beta.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = X.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(c);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    double* h = xhat.row(i);
    double* y = Y.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      h[j] = (xi[j] - mean) * rstd[i];
      y[j] = h[j] * g[j] + b[j];
    }
  }
  return make_op("layer_norm", std::move(Y), {x, gamma, beta},
                 [r, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                   auto& nx = self.inputs[0];
                   auto& ng = self.inputs[1];
                   auto& nb = self.inputs[2];
                   if (needs(ng)) {
                     auto dg = ng->grad_buffer().data();
                     for (std::size_t i = 0; i < r; ++i) {
                       const double* dy = self.grad.row(i);
                       const double* h = xhat.row(i);
                       for (std::size_t j = 0; j < c; ++j) dg[j] += dy[j] * h[j];
                     }
                   }
                   if (needs(nb)) {
                     auto db = nb->grad_buffer().data();
                     for (std::size_t i = 0; i < r; ++i) simd::axpy(1.0, self.grad.row(i), db.data(), c);
                   }
                   if (needs(nx)) {
                     Tensor& dX = nx->grad_buffer();
                     const auto gv = ng->value.data();
                     std::vector<double> dh(c);
                     const double inv_c = 1.0 / static_cast<double>(c);
                     for (std::size_t i = 0; i < r; ++i) {
                       const double* dy = self.grad.row(i);
                       const double* h = xhat.row(i);
                       double sum_dh = 0.0, sum_dh_h = 0.0;
                       for (std::size_t j = 0; j < c; ++j) {
                         dh[j] = dy[j] * gv[j];
                         sum_dh += dh[j];
                         sum_dh_h += dh[j] * h[j];
                       }
                       double* dx = dX.row(i);
                       for (std::size_t j = 0; j < c; ++j) {
                         dx[j] += rstd[i] * (dh[j] - inv_c * sum_dh - h[j] * inv_c * sum_dh_h);
                       }
                     }
                   }
                 });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  const Tensor& Tb = table.value();
  require_rank2("gather_rows", Tb);
  if (ids.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t c = Tb.cols();
  Tensor out({ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= Tb.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[i]) + " outside table " +
                              shape_string(Tb.shape()));
    }
    std::copy_n(Tb.row(static_cast<std::size_t>(ids[i])), c, out.row(i));
  }
  return make_op("gather_rows", std::move(out), {table},
                 [idx = std::vector<int>(ids.begin(), ids.end()), c](Node& self) {
                   Tensor& dT = self.inputs[0]->grad_buffer();
                   for (std::size_t i = 0; i < idx.size(); ++i) {
                     simd::axpy(1.0, self.grad.row(i), dT.row(static_cast<std::size_t>(idx[i])), c);
                   }
                 });
}

Var attention(const Var& q, const Var& k, const Var& v, const AttentionOptions& options) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require_rank2("attention", Q);
  if (K.shape() != Q.shape()) shape_fail("attention(k)", Q.shape(), K.shape());
  if (V.shape() != Q.shape()) shape_fail("attention(v)", Q.shape(), V.shape());
  const std::size_t T = Q.rows(), D = Q.cols(), H = options.heads;
  if (H == 0 || D % H != 0) {
    throw ShapeError("attention: width " + std::to_string(D) + " not divisible by " + std::to_string(H) + " heads");
  }
  const std::size_t valid = options.valid_rows == 0 ? T : std::min(options.valid_rows, T);
  const std::size_t dh = D / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = options.causal;
  auto key_end = [=](std::size_t i) { return causal ? std::min(i + 1, valid) : valid; };

  // probs[h] is T x T with zeros outside each row's key range.
  std::vector<double> probs(H * T * T, 0.0);
  Tensor out({T, D});
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t off = h * dh;
    double* P = probs.data() + h * T * T;
    simd::gemm_nt(T, T, dh, Q.data().data() + off, D, K.data().data() + off, D, P, T);
    for (std::size_t i = 0; i < T; ++i) {
      double* p = P + i * T;
      const std::size_t end = key_end(i);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < end; ++j) {
        p[j] *= inv_sqrt;
        mx = std::max(mx, p[j]);
      }
      for (std::size_t j = 0; j < end; ++j) p[j] -= mx;
      simd::exp(p, p, end);
      double s = 0.0;
      for (std::size_t j = 0; j < end; ++j) s += p[j];
      for (std::size_t j = 0; j < end; ++j) p[j] /= s;
      std::fill(p + end, p + T, 0.0);
    }
    simd::gemm(T, dh, T, P, T, V.data().data() + off, D, out.data().data() + off, D);
  }
  return make_op("attention", std::move(out), {q, k, v}, [T, D, H, dh, inv_sqrt, probs = std::move(probs)](Node& self) {
    auto& nq = self.inputs[0];
    auto& nk = self.inputs[1];
    auto& nv = self.inputs[2];
    const double* dO = self.grad.data().data();
    std::vector<double> dS(T * T);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      const double* P = probs.data() + h * T * T;
      if (needs(nv)) simd::gemm_tn(T, dh, T, P, T, dO + off, D, nv->grad_buffer().data().data() + off, D);
      if (!needs(nq) && !needs(nk)) continue;
      std::fill(dS.begin(), dS.end(), 0.0);
      simd::gemm_nt(T, T, dh, dO + off, D, nv->value.data().data() + off, D, dS.data(), T);
      for (std::size_t i = 0; i < T; ++i) {
        const double* p = P + i * T;
        double* g = dS.data() + i * T;
        const double inner = simd::dot(p, g, T);
        for (std::size_t j = 0; j < T; ++j) g[j] = p[j] * (g[j] - inner) * inv_sqrt;
      }
      if (needs(nq)) {
        simd::gemm(T, dh, T, dS.data(), T, nk->value.data().data() + off, D, nq->grad_buffer().data().data() + off,
                   D);
      }
      if (needs(nk)) {
        simd::gemm_tn(T, dh, T, dS.data(), T, nq->value.data().data() + off, D,
                      nk->grad_buffer().data().data() + off, D);
      }
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  const Tensor& L = logits.value();
  require_rank2("cross_entropy", L);
  const std::size_t r = L.rows(), c = L.cols();
  if (targets.size() != r) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_string(L.shape()));
  }
  Tensor probs({r, c});
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(c) +
                              " classes");
    }
    const double* l = L.row(i);
    const double mx = *std::max_element(l, l + c);
    double* p = probs.row(i);
    for (std::size_t j = 0; j < c; ++j) p[j] = l[j] - mx;
    simd::exp(p, p, c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += p[j];
    for (std::size_t j = 0; j < c; ++j) p[j] /= s;
    total += mx + std::log(s) - l[t];
  }
  const double inv_r = 1.0 / static_cast<double>(r);
  return make_op("cross_entropy", Tensor::scalar(total * inv_r), {logits},
                 [probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end()), r, c,
                  inv_r](Node& self) {
                   const double up = self.grad[0] * inv_r;
                   Tensor& dL = self.inputs[0]->grad_buffer();
                   for (std::size_t i = 0; i < r; ++i) {
                     simd::axpy(up, probs.row(i), dL.row(i), c);
                     dL.at(i, static_cast<std::size_t>(tg[i])) -= up;
                   }
                 });
}

Var mse(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_fail("mse", a.shape(), b.shape());
  const auto ad = a.value().data();
  const auto bd = b.value().data();
  const double inv_n = 1.0 / static_cast<double>(ad.size());
  const double s = simd::squared_distance(ad.data(), bd.data(), ad.size());
  return make_op("mse", Tensor::scalar(s * inv_n), {a, b}, [inv_n](Node& self) {
    const double up = 2.0 * self.grad[0] * inv_n;
    const auto av = self.inputs[0]->value.data();
    const auto bv = self.inputs[1]->value.data();
    for (int side = 0; side < 2; ++side) {
      auto& in = self.inputs[side];
      if (!needs(in)) continue;
      auto g = in->grad_buffer().data();
      const double sign = side == 0 ? up : -up;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * (av[i] - bv[i]);
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op("sum", Tensor::scalar(s), {a}, [](Node& self) {
    const double up = self.grad[0];
    for (auto& g : self.inputs[0]->grad_buffer().data()) g += up;
  });
}

Var sum_squares(const Var& a) {
  const auto d = a.value().data();
  const double s = simd::dot(d.data(), d.data(), d.size());
  return make_op("sum_squares", Tensor::scalar(s), {a}, [](Node& self) {
    const double up = 2.0 * self.grad[0];
    const auto x = self.inputs[0]->value.data();
    simd::axpy(up, x.data(), self.inputs[0]->grad_buffer().data().data(), x.size());
  });
}

Var stop_gradient(const Var& a) {
  auto node = std::make_shared<Node>();
  node->value = a.value();
  node->op = "stop_gradient";
  return Var(std::move(node));
}

Var straight_through(const Var& u, const Var& q, bool grad_to_quantized) {
  if (u.shape() != q.shape()) shape_fail("straight_through", u.shape(), q.shape());
  std::vector<Var> inputs{u};
  if (grad_to_quantized) inputs.push_back(q);
  return make_op("straight_through", q.value(), std::move(inputs), [](Node& self) {
    for (auto& in : self.inputs) {
      if (needs(in)) in->grad_buffer().add_inplace(self.grad);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    require_rank2("concat_rows", p.value());
    if (p.cols() != c) shape_fail("concat_rows", parts[0].shape(), p.shape());
    r += p.rows();
  }
  Tensor out({r, c});
  std::vector<std::size_t> starts;
  std::size_t at = 0;
  for (const auto& p : parts) {
    starts.push_back(at);
    std::copy(p.value().data().begin(), p.value().data().end(), out.row(at));
    at += p.rows();
  }
  return make_op("concat_rows", std::move(out), {parts.begin(), parts.end()},
                 [starts = std::move(starts), c](Node& self) {
                   for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                     auto& in = self.inputs[k];
                     if (!needs(in)) continue;
                     auto g = in->grad_buffer().data();
                     simd::axpy(1.0, self.grad.row(starts[k]), g.data(), g.size());
                   }
                 });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p.value());
    if (p.rows() != r) shape_fail("concat_cols", parts[0].shape(), p.shape());
    c += p.cols();
  }
  Tensor out({r, c});
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    for (std::size_t i = 0; i < r; ++i) std::copy_n(p.value().row(i), p.cols(), out.row(i) + at);
    at += p.cols();
  }
  return make_op("concat_cols", std::move(out), {parts.begin(), parts.end()},
                 [offsets = std::move(offsets), r](Node& self) {
                   for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                     auto& in = self.inputs[k];
                     if (!needs(in)) continue;
                     Tensor& g = in->grad_buffer();
                     const std::size_t w = g.cols();
                     for (std::size_t i = 0; i < r; ++i) simd::axpy(1.0, self.grad.row(i) + offsets[k], g.row(i), w);
                   }
                 });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  Tensor out = a.value().slice_rows(begin, end);
  return make_op("slice_rows", std::move(out), {a}, [begin](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    simd::axpy(1.0, self.grad.data().data(), g.row(begin), self.grad.size());
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  require_rank2("slice_cols", A);
  if (begin >= end || end > A.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_string(A.shape()));
  }
  const std::size_t r = A.rows(), w = end - begin;
  Tensor out({r, w});
  for (std::size_t i = 0; i < r; ++i) std::copy_n(A.row(i) + begin, w, out.row(i));
  return make_op("slice_cols", std::move(out), {a}, [begin, r, w](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) simd::axpy(1.0, self.grad.row(i), g.row(i) + begin, w);
  });
}

void backward(const Var& loss) {
  if (!loss) throw std::invalid_argument("backward: empty loss");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->grad.empty()) continue;
    if (!node->grad.all_finite()) {
      throw NonFiniteGradient(std::string("backward: non-finite gradient at output of '") + node->op + "' node " +
                              shape_string(node->value.shape()));
    }
    if (node->backward) node->backward(*node);
    if (node->param != nullptr && node->param->trainable) node->param->grad.add_inplace(node->grad);
  }
}

}  // namespace lasttok::compute
