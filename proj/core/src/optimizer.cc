#include "softquant/optimizer.h"

#include <cmath>

#include "softquant/errors.h"

namespace softquant {

Optimizer::Optimizer(OptimizerKind kind, double learning_rate)
    : kind_(kind), learning_rate_(learning_rate) {}

void Optimizer::Step(const std::vector<Matrix*>& params,
                     const std::vector<const Matrix*>& grads) {
  if (params.size() != grads.size()) {
    throw InvalidInput("optimizer needs one gradient per parameter block");
  }
  ++steps_;
  if (kind_ == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      *params[i] -= learning_rate_ * *grads[i];
    }
    return;
  }
  if (first_.empty()) {
    for (const Matrix* p : params) {
      first_.push_back(Matrix::Zero(p->rows(), p->cols()));
      second_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = *grads[i];
    first_[i] = beta1_ * first_[i] + (1.0 - beta1_) * g;
    second_[i] = beta2_ * second_[i] + (1.0 - beta2_) * g.cwiseAbs2();
    params[i]->array() -=
        learning_rate_ * (first_[i].array() / c1) /
        ((second_[i].array() / c2).sqrt() + eps_);
  }
}

}  // namespace softquant
