#ifndef SOFTQUANT_SYNTH_H_
#define SOFTQUANT_SYNTH_H_

// Synthetic data: a low-rank nonnegative product pushed through a hard
// per-feature quantile normalization, plus truncated Gaussian noise.
//
// Draw order from a single Rng(seed), each block row-major:
//   U*  d x k      Poisson(lambda)
//   V*  k x n      column j ~ Dirichlet(alpha 1_k), columns in order
//   R*  d x m*     standard normal; Q*_i = cumsum(exp(R*_i))
//   N   d x n      standard normal, drawn only when sigma > 0
// X_ij = Q*_i[ceil(rank_ij m* / n) - 1] + max(sigma N_ij, 0), where rank_ij
// is the 1-based position of (U*V*)_ij in a stable ascending sort of row i.

#include <cstdint>

#include "softquant/ot_core.h"

namespace softquant {

struct SynthConfig {
  Index d = 160;
  Index n = 80;
  int k = 8;
  Index m_star = 0;  // 0 means n
  double poisson_lambda = 2.0;
  double dirichlet_alpha = 0.5;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void Validate() const;
  Index levels() const { return m_star == 0 ? n : m_star; }
};

struct SynthData {
  Matrix x;
  Matrix u;  // U*
  Matrix v;  // V*
  Matrix q;  // Q*, d x m*, rows non-decreasing
};

SynthData SynthGenerate(const SynthConfig& config);

// Row-wise hard quantile normalization with uniform weights: entry of rank r
// (1-based, stable) in a row of length n maps to q_i[ceil(r m / n) - 1].
Matrix HardQuantileNormalize(const Matrix& z, const Matrix& q);

// Step-function quantile of the sorted table `q` at level in (0, 1]:
// q[ceil(level m) - 1], with a 1e-9 guard against round-off at the steps.
double StepQuantile(const Vector& q, double level);

}  // namespace softquant

#endif  // SOFTQUANT_SYNTH_H_
