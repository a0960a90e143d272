#ifndef SOFTQUANT_PARAM_MAPS_H_
#define SOFTQUANT_PARAM_MAPS_H_

// Maps from unconstrained precursors to constrained model quantities, each
// paired with its vector-Jacobian product.
//
//   weights   b = softmax(F)
//   free      q = cumsum(exp(R))                       (deflation side)
//   pinned    q = s + (t - s) [0, cumsum(softmax(R))]  (inflation side)
//   factors   U = exp(log U)

#include "softquant/ot_core.h"

namespace softquant {

Vector WeightsFromPrecursor(const Vector& f);
Vector VjpWeights(const Vector& cotangent, const Vector& weights);

// Throws OverflowError when any entry exceeds 700.
Vector QuantilesFree(const Vector& r);
Vector VjpQuantilesFree(const Vector& cotangent, const Vector& r);

// r has m - 1 entries and yields m quantiles with q[0] == s and
// q[m-1] == t exactly. Throws InvalidRange unless s < t. PinnedOrConstant
// additionally accepts s == t and returns the constant vector.
Vector QuantilesPinned(const Vector& r, double s, double t);
Vector QuantilesPinnedOrConstant(const Vector& r, double s, double t);
Vector VjpQuantilesPinned(const Vector& cotangent, const Vector& r, double s,
                          double t);

// U = exp(log_u) elementwise.
Matrix FactorsFromPrecursor(const Matrix& log_u);
Matrix VjpFactors(const Matrix& cotangent, const Matrix& factors);

// Per-feature quantile-transform parameters: weight precursors F (d x m),
// quantile precursors R (d x (m-1) when pinned, d x m when free), and the
// row ranges [s_i, t_i] used by pinned quantiles.
struct PrecursorSet {
  Matrix f;
  Matrix r;
  Vector s;
  Vector t;
  bool pinned = true;

  Index features() const { return f.rows(); }
  Index levels() const { return f.cols(); }
  Vector Weights(Index row) const;
  Vector Quantiles(Index row) const;
};

// Zero precursors: uniform weights, evenly spaced pinned quantiles (or
// q = 1..m when free).
PrecursorSet InitialPrecursors(Index features, Index levels, bool pinned,
                               const Vector& s = {}, const Vector& t = {});

}  // namespace softquant

#endif  // SOFTQUANT_PARAM_MAPS_H_
