#include "lasttok/train/adamw.hpp"

#include <cmath>

namespace lasttok::train {

using compute::Tensor;

AdamW::AdamW(std::vector<compute::ParamPtr> params, const TrainConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

double AdamW::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) {
    for (double g : p->grad.data()) s += g * g;
  }
  return std::sqrt(s);
}

double AdamW::step(double lr) {
  const double norm = grad_norm();
  const double clip = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    auto w = p.value.data();
    const auto g = p.grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    const double decay = p.value.shape().size() >= 2 ? lr * config_.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      w[j] -= decay * w[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
  return norm;
}

void AdamW::reset_row(const compute::Parameter& p, std::size_t row) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].get() != &p) continue;
    const std::size_t cols = p.value.cols();
    std::fill_n(m_[i].row(row), cols, 0.0);
    std::fill_n(v_[i].row(row), cols, 0.0);
  }
}

void AdamW::save(io::TensorArchive& archive) const {
  archive.metadata["adam_steps"] = t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    archive.put("adam.m/" + params_[i]->name, m_[i]);
    archive.put("adam.v/" + params_[i]->name, v_[i]);
  }
}

void AdamW::load(const io::TensorArchive& archive) {
  t_ = archive.metadata.at("adam_steps").get<std::size_t>();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = archive.get("adam.m/" + params_[i]->name);
    v_[i] = archive.get("adam.v/" + params_[i]->name);
    if (m_[i].shape() != params_[i]->value.shape() || v_[i].shape() != params_[i]->value.shape()) {
      throw compute::ShapeError("adam: moment shape mismatch for " + params_[i]->name);
    }
  }
}

}  // namespace lasttok::train
