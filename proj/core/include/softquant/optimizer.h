#ifndef SOFTQUANT_OPTIMIZER_H_
#define SOFTQUANT_OPTIMIZER_H_

#include <vector>

#include "softquant/factorization.h"

namespace softquant {

// First-order updates over a list of parameter blocks. Adam uses
// beta1 = 0.9, beta2 = 0.999, eps = 1e-8 with bias correction.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate);

  // params[i] -= update(grads[i]). Blocks must keep their shapes between
  // calls.
  void Step(const std::vector<Matrix*>& params,
            const std::vector<const Matrix*>& grads);

  long steps() const { return steps_; }

 private:
  OptimizerKind kind_;
  double learning_rate_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long steps_ = 0;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
};

}  // namespace softquant

#endif  // SOFTQUANT_OPTIMIZER_H_
