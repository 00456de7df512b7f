#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "promos/autodiff.hpp"

namespace promos {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

/// Gradient descent over a fixed parameter list. Adam uses beta1=0.9,
/// beta2=0.999, eps=1e-8. Parameters missing from a step's gradients are left alone.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::vector<ad::Parameter*> params);

  void step(const ad::Gradients& grads);
  std::size_t steps() const { return steps_; }

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<ad::Parameter*> params_;
  std::vector<ad::Tensor> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace promos
