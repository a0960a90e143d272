#ifndef SOFTQUANT_IMPLICIT_GRAD_H_
#define SOFTQUANT_IMPLICIT_GRAD_H_

// Reverse-mode gradients of converged entropic transport plans, obtained by
// implicit differentiation of the dual first-order conditions rather than by
// unrolling the Sinkhorn loop.
//
// At optimality P = exp((f + g - C) / eps) with P 1 = a and P^T 1 = b. Write
// M1 = diag(1 / P 1) P and M2 = diag(1 / P^T 1) P^T. The potentials are only
// defined up to (f + c, g - c), so f[0] is pinned to zero and the first row
// of M1 is deleted; the adjoint system then reduces to the m x m Schur
// complement S = I - M1^T M2^T. For a cotangent H on P:
//
//   r_f = (H o P) 1,   r_g = (H o P)^T 1
//   w_g = S^{-1} (r_g - M1^T r_f),   w_f = r_f - M2^T w_g
//   grad_x = (1/eps) [ -(H o P o D) 1 + w_f o (M1 o D) 1 + (M2^T o D) w_g ]
//   grad_b = w_g / b
//
// with D[i][j] = dc/dx (x_i, y_j). Compared with the commonly printed form of
// this recursion, D is the plain derivative of the cost (not its negation),
// the adjoint terms carry a 1/eps factor, and the b-gradient divides by b.
// All three were settled against central finite differences (see
// tests/implicit_grad_test.cc).
//
// Evaluation touches O(nm + m^2) memory whatever the iteration count.

#include <Eigen/LU>
#include <cstddef>
#include <functional>

#include "softquant/ot_core.h"
#include "softquant/soft_operators.h"

namespace softquant {

struct VjpWorkspace {
  Matrix plan;   // n x m
  Matrix m1;     // diag(1 / P 1) P, first row zeroed
  Matrix m2;     // diag(1 / P^T 1) P^T, m x n
  Matrix delta;  // n x m, dc/dx
  Eigen::PartialPivLU<Matrix> schur;  // S = I - M1^T M2^T
  Vector f;      // pinned so f[0] == 0
  Vector g;
  Vector b;
  double epsilon = 0.0;
};

// Requires solution.converged (NotConverged otherwise). `x` are the values
// the cost was built from. Throws SingularSchur if S cannot be factorized.
VjpWorkspace BuildWorkspace(const TransportSolution& solution, const Vector& x,
                            const AnchorGrid& target,
                            const CostSpec& cost = {});

// Transpose-Jacobian of the converged plan with respect to x, applied to H.
Vector VjpPlanWrtX(const Matrix& h, const VjpWorkspace& ws);

// Same with respect to b, in ambient coordinates; only its action on
// sum-zero directions is meaningful.
Vector VjpPlanWrtB(const Matrix& h, const VjpWorkspace& ws);

// Gradient of a^{-1} o (P q) in q for fixed P: P^T (h / a).
Vector VjpQuantileWrtQ(const Vector& h, const TransportSolution& solution,
                       const Vector& a);

// Gradient of a^{-1} o (P q) in x (the cost input).
Vector VjpQuantileWrtX(const Vector& h, const VjpWorkspace& ws,
                       const Vector& q, const Vector& a);

// Gradient of a^{-1} o (P q) in b (ambient coordinates).
Vector VjpQuantileWrtB(const Vector& h, const VjpWorkspace& ws,
                       const Vector& q, const Vector& a);

struct CotangentBundle {
  Vector wrt_x;  // raw input values, through the row rescaling
  Vector wrt_b;
  Vector wrt_q;
};

// All gradients of a soft quantile normalization result. Requires the
// result to come from a converged solve.
CotangentBundle QuantileNormalizeVjp(const SoftOpResult& result,
                                     const Vector& source_weights,
                                     const TargetSpec& spec, const Vector& h,
                                     const CostSpec& cost = {});

// Central differences; column j is (fn(p + h e_j) - fn(p - h e_j)) / 2h.
Matrix FiniteDiffJacobian(const std::function<Vector(const Vector&)>& fn,
                          const Vector& point, double step);

// Test-mode reference: reverse-mode differentiation through `iterations`
// scaling-form Sinkhorn steps, storing every scaling. The plan differentiated
// is diag(u_l) K diag(v_l). Memory grows as O(l (n + m) + nm).
struct UnrolledVjp {
  Matrix plan;
  Vector wrt_x;
  Vector wrt_b;
  std::size_t tape_doubles = 0;
};

UnrolledVjp UnrolledPlanVjp(const DiscreteMeasure& source,
                            const AnchorGrid& target, double epsilon,
                            int iterations, const Matrix& h,
                            const CostSpec& cost = {});

}  // namespace softquant

#endif  // SOFTQUANT_IMPLICIT_GRAD_H_
