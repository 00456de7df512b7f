#include "promos/optimizer.hpp"

#include <cmath>

#include "promos/error.hpp"

namespace promos {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ValidationError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerKind kind, double lr, std::vector<ad::Parameter*> params)
    : kind_(kind), lr_(lr), params_(std::move(params)) {
  if (kind_ == OptimizerKind::Adam) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }
}

void Optimizer::step(const ad::Gradients& grads) {
  ++steps_;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::Parameter& p = *params_[k];
    if (!grads.contains(p)) continue;
    const ad::Tensor& g = grads.of(p);
    auto& w = p.value.data();
    if (kind_ == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
      continue;
    }
    auto& m = m_[k].data();
    auto& v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

}  // namespace promos
