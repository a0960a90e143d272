#ifndef SOFTQUANT_OT_CORE_H_
#define SOFTQUANT_OT_CORE_H_

// Entropic optimal transport between a weighted 1-D point cloud and an
// ordered anchor grid. Two solvers are provided:
//
//  * SinkhornScaling: the classic alternating scaling of the Gibbs kernel
//    K = exp(-C / eps), starting from u_0 = 1 and applying
//        v_i = b / (K^T u_{i-1}),   u_i = a / (K v_i).
//    Both plans diag(u_l) K diag(v_l) ("plus", rows sum to a) and
//    diag(u_{l-1}) K diag(v_l) ("minus", columns sum to b) are exposed.
//
//  * LogSinkhorn: the same iteration on dual potentials (f, g), with
//    soft-min reductions so it survives small eps.
//
// All functions are pure; nothing here holds shared state.

#include <Eigen/Core>

namespace softquant {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class CostKind { kSquaredDifference };

// Ground cost c(x, y). Every kind is submodular (d2c/dxdy < 0).
struct CostSpec {
  CostKind kind = CostKind::kSquaredDifference;

  double operator()(double x, double y) const;
  // dc/dx at (x, y).
  double DerivativeX(double x, double y) const;
  double CrossDerivative(double x, double y) const;
};

// Weights a (probability vector) and support x of a 1-D empirical measure.
struct DiscreteMeasure {
  Vector weights;
  Vector values;

  void Validate() const;
};

// Weights b and strictly increasing support y of the target grid.
struct AnchorGrid {
  Vector weights;
  Vector values;

  void Validate() const;
};

Vector UniformWeights(Index size);
// m regularly spaced values on [0, 1]; a single point sits at 0.5.
Vector RegularGrid(Index size);
AnchorGrid UniformGrid(Index size);

// Iteration policy. Fixed(l) runs exactly l Sinkhorn iterations; Tolerance
// runs until the L1 column-marginal error of the row-exact plan drops below
// `tolerance`, giving up after `max_iterations`.
struct IterControl {
  int fixed_iterations = 0;
  double tolerance = 1e-6;
  int max_iterations = 5000;

  static IterControl Fixed(int iterations);
  static IterControl Tolerance(double tolerance = 1e-6,
                               int max_iterations = 5000);
  bool is_fixed() const { return fixed_iterations > 0; }
};

// C[i][j] = c(x_i, y_j).
Matrix CostMatrix(const Vector& x, const Vector& y, const CostSpec& cost = {});
// D[i][j] = dc/dx (x_i, y_j).
Matrix CostDerivativeMatrix(const Vector& x, const Vector& y,
                            const CostSpec& cost = {});

struct ScalingState {
  Vector u;       // u_l
  Vector u_prev;  // u_{l-1}
  Vector v;       // v_l
  Matrix kernel;  // K = exp(-C / eps)
  int iterations = 0;
  double residual = 0.0;  // L1 column-marginal error of PlanPlus
};

// Runs the scaling-form Sinkhorn iteration. Throws UnderflowError when the
// kernel has an all-zero row or column or a scaling leaves the finite
// positive range, and MaxIterExceeded when a tolerance run does not converge.
ScalingState SinkhornScaling(const DiscreteMeasure& source,
                             const AnchorGrid& target, double epsilon,
                             const IterControl& control,
                             const CostSpec& cost = {});

// diag(u_l) K diag(v_l): rows sum to a.
Matrix PlanPlus(const ScalingState& state);
// diag(u_{l-1}) K diag(v_l): columns sum to b.
Matrix PlanMinus(const ScalingState& state);

// Row-wise -eps * log(sum_j exp(-A_ij / eps)), evaluated with the row
// minimum factored out.
Vector SoftminEps(const Matrix& values, double epsilon);

// Converged (or last) dual potentials and the plans they generate.
struct TransportSolution {
  Vector f;
  Vector g;
  Vector f_prev;      // f before the last row update
  Matrix plan;        // exp((f + g - C) / eps), rows sum to a
  Matrix plan_minus;  // exp((f_prev + g - C) / eps), columns sum to b
  double epsilon = 0.0;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Log-domain Sinkhorn. In tolerance mode throws MaxIterExceeded carrying the
// last residual; potentials are never returned non-finite.
TransportSolution LogSinkhorn(const DiscreteMeasure& source,
                              const AnchorGrid& target, double epsilon,
                              const IterControl& control,
                              const CostSpec& cost = {});

// Potentials f = eps log u, g = eps log v of a scaling-form state.
// `tolerance` decides the converged flag.
TransportSolution ToTransportSolution(const ScalingState& state,
                                      double epsilon, double tolerance);

enum class SolverKind {
  kAuto,     // scaling form, falling back to log domain on underflow
  kScaling,
  kLog,
};

// Solver dispatch used by the operators. Never throws MaxIterExceeded: a
// tolerance run that stops at max_iterations comes back with
// converged == false.
TransportSolution SolveTransport(const DiscreteMeasure& source,
                                 const AnchorGrid& target, double epsilon,
                                 const IterControl& control,
                                 SolverKind solver = SolverKind::kAuto,
                                 const CostSpec& cost = {});

// Affine min-max map of a row onto [0, 1], kept so gradients can be pulled
// back to the raw values. A constant row maps to 0.5 with a zero scale.
struct RowRescale {
  double offset = 0.0;
  double width = 0.0;
  Index argmin = 0;
  Index argmax = 0;
  bool degenerate = false;
  bool identity = false;

  static RowRescale Fit(const Vector& x);
  static RowRescale Identity();

  Vector Apply(const Vector& x) const;
  // Gradient with respect to the raw row given the gradient with respect to
  // the rescaled row `rescaled`. Includes the dependence of the row minimum
  // and maximum on their own entries.
  Vector Backprop(const Vector& grad_rescaled, const Vector& rescaled) const;
};

}  // namespace softquant

#endif  // SOFTQUANT_OT_CORE_H_
