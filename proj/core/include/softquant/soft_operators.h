#ifndef SOFTQUANT_SOFT_OPERATORS_H_
#define SOFTQUANT_SOFT_OPERATORS_H_

// Smoothed rank, sort and quantile-normalization operators built on the
// transport plans of ot_core.h:
//
//   rank     = n a^{-1} o (P+ cumsum(b))        in [0, n]^n
//   sort     = b^{-1} o (P-^T x)                in R^m, non-decreasing
//   quantile = a^{-1} o (P+ q)                  convex combinations of q
//
// P+ has rows summing to a and P- has columns summing to b after any number
// of iterations, so all three outputs are convex combinations of their
// targets and order-consistent with x for every iteration count.

#include <span>
#include <vector>

#include "softquant/ot_core.h"

namespace softquant {

// How the input values are brought onto the anchor grid before building the
// cost. kMinMax maps each row affinely onto [0, 1].
enum class Rescale { kMinMax, kNone };

struct SoftOptions {
  double epsilon = 0.01;
  IterControl control = IterControl::Tolerance();
  SolverKind solver = SolverKind::kAuto;
  Rescale rescale = Rescale::kMinMax;
  CostSpec cost;
};

// Target measure sum_j b_j delta_{q_j} together with its anchor grid y.
struct TargetSpec {
  Vector b;
  Vector q;
  Vector y;

  // Uniform b, regular grid y.
  static TargetSpec Uniform(const Vector& q);
  AnchorGrid grid() const { return AnchorGrid{b, y}; }
  // q must be non-decreasing; `strict` additionally rejects ties.
  void Validate(bool strict = true) const;
};

struct SoftOpResult {
  Vector output;
  TransportSolution solution;
  RowRescale rescale;
  // Values the cost was built from (input after rescaling).
  Vector cost_input;
};

SoftOpResult SoftRank(const DiscreteMeasure& source, const AnchorGrid& target,
                      const SoftOptions& options);

SoftOpResult SoftSort(const DiscreteMeasure& source, const AnchorGrid& target,
                      const SoftOptions& options);

// Constant quantile vectors are accepted (the output is then that constant);
// any decreasing step is rejected.
SoftOpResult SoftQuantileNormalize(const DiscreteMeasure& source,
                                   const TargetSpec& spec,
                                   const SoftOptions& options);

// Applies SoftQuantileNormalize to each row of `w` with uniform source
// weights. Rows are independent; per-row failures are collected into a
// single RowErrors.
Matrix RowQuantileNormalize(const Matrix& w, std::span<const TargetSpec> specs,
                            const SoftOptions& options);

// Transport solve shared by the operators and the training loops: rescales
// `values`, solves, and never throws on a missed tolerance.
SoftOpResult SolveForValues(const Vector& weights, const Vector& values,
                            const AnchorGrid& target,
                            const SoftOptions& options);

}  // namespace softquant

#endif  // SOFTQUANT_SOFT_OPERATORS_H_
