#include "softquant/ot_core.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "softquant/errors.h"

namespace softquant {
namespace {

constexpr double kSumTolerance = 1e-12;

void ValidateProbability(const Vector& weights, const char* name) {
  if (weights.size() == 0) {
    throw InvalidInput(std::string(name) + " is empty");
  }
  for (Index i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i]) || weights[i] <= 0.0) {
      throw InvalidInput(std::string(name) + " must be strictly positive");
    }
  }
  if (std::abs(weights.sum() - 1.0) > kSumTolerance) {
    throw InvalidInput(std::string(name) + " must sum to 1");
  }
}

void ValidateFinite(const Vector& values, const char* name) {
  if (!values.allFinite()) {
    throw InvalidInput(std::string(name) + " has non-finite entries");
  }
}

void CheckPositiveFinite(const Vector& values, const char* what) {
  for (Index i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
      throw UnderflowError(
          std::string(what) +
          " left the representable range; use the log-domain solver or a "
          "larger epsilon");
    }
  }
}

void ValidateProblem(const DiscreteMeasure& source, const AnchorGrid& target,
                     double epsilon) {
  source.Validate();
  target.Validate();
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InvalidInput("epsilon must be positive and finite");
  }
}

// Per-row and per-column log-sum-exp of Z_ij = (f_i + g_j - C_ij) / eps.
Vector RowLogSumExp(const Matrix& cost, const Vector& f, const Vector& g,
                    double epsilon) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  Vector out(n);
  for (Index i = 0; i < n; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < m; ++j) {
      hi = std::max(hi, (f[i] + g[j] - cost(i, j)) / epsilon);
    }
    double sum = 0.0;
    for (Index j = 0; j < m; ++j) {
      sum += std::exp((f[i] + g[j] - cost(i, j)) / epsilon - hi);
    }
    out[i] = hi + std::log(sum);
  }
  return out;
}

Vector ColLogSumExp(const Matrix& cost, const Vector& f, const Vector& g,
                    double epsilon) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  Vector out(m);
  for (Index j = 0; j < m; ++j) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      hi = std::max(hi, (f[i] + g[j] - cost(i, j)) / epsilon);
    }
    double sum = 0.0;
    for (Index i = 0; i < n; ++i) {
      sum += std::exp((f[i] + g[j] - cost(i, j)) / epsilon - hi);
    }
    out[j] = hi + std::log(sum);
  }
  return out;
}

Matrix GibbsPlan(const Matrix& cost, const Vector& f, const Vector& g,
                 double epsilon) {
  Matrix plan(cost.rows(), cost.cols());
  for (Index j = 0; j < cost.cols(); ++j) {
    for (Index i = 0; i < cost.rows(); ++i) {
      plan(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / epsilon);
    }
  }
  return plan;
}

struct ScalingRun {
  ScalingState state;
  bool converged = false;
};

ScalingRun RunScaling(const DiscreteMeasure& source, const AnchorGrid& target,
                      double epsilon, const IterControl& control,
                      const CostSpec& cost) {
  ValidateProblem(source, target, epsilon);
  const Vector& a = source.weights;
  const Vector& b = target.weights;

  ScalingRun run;
  ScalingState& s = run.state;
  // std::exp rather than Eigen's vectorized exp, which clamps its argument
  // and would hide kernel underflow.
  s.kernel = (-CostMatrix(source.values, target.values, cost) / epsilon)
                 .unaryExpr([](double v) { return std::exp(v); });
  const Vector row_max = s.kernel.rowwise().maxCoeff();
  const Vector col_max = s.kernel.colwise().maxCoeff().transpose();
  if ((row_max.array() <= 0.0).any() || (col_max.array() <= 0.0).any()) {
    throw UnderflowError(
        "Gibbs kernel has an all-zero row or column; use the log-domain "
        "solver or a larger epsilon");
  }

  const int limit =
      control.is_fixed() ? control.fixed_iterations : control.max_iterations;
  if (limit < 1) throw InvalidInput("at least one iteration is required");

  s.u = Vector::Ones(a.size());
  Vector col = s.kernel.transpose() * s.u;
  for (int it = 1; it <= limit; ++it) {
    CheckPositiveFinite(col, "K^T u");
    s.v = b.cwiseQuotient(col);
    CheckPositiveFinite(s.v, "scaling v");
    s.u_prev = s.u;
    const Vector row = s.kernel * s.v;
    CheckPositiveFinite(row, "K v");
    s.u = a.cwiseQuotient(row);
    CheckPositiveFinite(s.u, "scaling u");
    col = s.kernel.transpose() * s.u;
    s.residual = (s.v.cwiseProduct(col) - b).lpNorm<1>();
    s.iterations = it;
    if (!control.is_fixed() && s.residual < control.tolerance) {
      run.converged = true;
      return run;
    }
  }
  run.converged = s.residual < control.tolerance;
  return run;
}

TransportSolution RunLog(const DiscreteMeasure& source,
                         const AnchorGrid& target, double epsilon,
                         const IterControl& control, const CostSpec& cost) {
  ValidateProblem(source, target, epsilon);
  const Index n = source.weights.size();
  const Index m = target.weights.size();
  const Matrix c = CostMatrix(source.values, target.values, cost);
  const Vector log_a = source.weights.array().log().matrix();
  const Vector log_b = target.weights.array().log().matrix();

  const int limit =
      control.is_fixed() ? control.fixed_iterations : control.max_iterations;
  if (limit < 1) throw InvalidInput("at least one iteration is required");

  TransportSolution sol;
  sol.epsilon = epsilon;
  sol.f = Vector::Zero(n);
  sol.g = Vector::Zero(m);
  // col_lse_j = -min_eps(C^T - g (+) f)_j / eps
  Vector col_lse = ColLogSumExp(c, sol.f, sol.g, epsilon);
  for (int it = 1; it <= limit; ++it) {
    sol.g += epsilon * (log_b - col_lse);
    sol.f_prev = sol.f;
    sol.f += epsilon * (log_a - RowLogSumExp(c, sol.f, sol.g, epsilon));
    if (!sol.f.allFinite() || !sol.g.allFinite()) {
      throw UnderflowError("log-domain potentials became non-finite");
    }
    col_lse = ColLogSumExp(c, sol.f, sol.g, epsilon);
    sol.residual = (col_lse.array().exp() - target.weights.array())
                       .abs()
                       .sum();
    sol.iterations = it;
    if (!control.is_fixed() && sol.residual < control.tolerance) break;
  }
  sol.converged = sol.residual < control.tolerance;
  sol.plan = GibbsPlan(c, sol.f, sol.g, epsilon);
  sol.plan_minus = GibbsPlan(c, sol.f_prev, sol.g, epsilon);
  return sol;
}

}  // namespace

double CostSpec::operator()(double x, double y) const {
  switch (kind) {
    case CostKind::kSquaredDifference:
      return (x - y) * (x - y);
  }
  return 0.0;
}

double CostSpec::DerivativeX(double x, double y) const {
  switch (kind) {
    case CostKind::kSquaredDifference:
      return 2.0 * (x - y);
  }
  return 0.0;
}

double CostSpec::CrossDerivative(double, double) const {
  switch (kind) {
    case CostKind::kSquaredDifference:
      return -2.0;
  }
  return 0.0;
}

void DiscreteMeasure::Validate() const {
  if (weights.size() != values.size()) {
    throw InvalidInput("measure weights and values differ in length");
  }
  ValidateProbability(weights, "source weights");
  ValidateFinite(values, "source values");
}

void AnchorGrid::Validate() const {
  if (weights.size() != values.size()) {
    throw InvalidInput("grid weights and values differ in length");
  }
  ValidateProbability(weights, "target weights");
  ValidateFinite(values, "grid values");
  for (Index j = 1; j < values.size(); ++j) {
    if (!(values[j] > values[j - 1])) {
      throw InvalidInput("grid values must be strictly increasing");
    }
  }
}

Vector UniformWeights(Index size) {
  return Vector::Constant(size, 1.0 / static_cast<double>(size));
}

Vector RegularGrid(Index size) {
  if (size == 1) return Vector::Constant(1, 0.5);
  return Vector::LinSpaced(size, 0.0, 1.0);
}

AnchorGrid UniformGrid(Index size) {
  return AnchorGrid{UniformWeights(size), RegularGrid(size)};
}

IterControl IterControl::Fixed(int iterations) {
  IterControl control;
  control.fixed_iterations = iterations;
  return control;
}

IterControl IterControl::Tolerance(double tolerance, int max_iterations) {
  IterControl control;
  control.tolerance = tolerance;
  control.max_iterations = max_iterations;
  return control;
}

Matrix CostMatrix(const Vector& x, const Vector& y, const CostSpec& cost) {
  ValidateFinite(x, "cost input x");
  ValidateFinite(y, "cost input y");
  Matrix c(x.size(), y.size());
  for (Index j = 0; j < y.size(); ++j) {
    for (Index i = 0; i < x.size(); ++i) c(i, j) = cost(x[i], y[j]);
  }
  return c;
}

Matrix CostDerivativeMatrix(const Vector& x, const Vector& y,
                            const CostSpec& cost) {
  Matrix d(x.size(), y.size());
  for (Index j = 0; j < y.size(); ++j) {
    for (Index i = 0; i < x.size(); ++i) d(i, j) = cost.DerivativeX(x[i], y[j]);
  }
  return d;
}

ScalingState SinkhornScaling(const DiscreteMeasure& source,
                             const AnchorGrid& target, double epsilon,
                             const IterControl& control,
                             const CostSpec& cost) {
  ScalingRun run = RunScaling(source, target, epsilon, control, cost);
  if (!control.is_fixed() && !run.converged) {
    throw MaxIterExceeded(run.state.residual, run.state.iterations);
  }
  return std::move(run.state);
}

Matrix PlanPlus(const ScalingState& state) {
  return state.u.asDiagonal() * state.kernel * state.v.asDiagonal();
}

Matrix PlanMinus(const ScalingState& state) {
  return state.u_prev.asDiagonal() * state.kernel * state.v.asDiagonal();
}

Vector SoftminEps(const Matrix& values, double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidInput("epsilon must be positive");
  Vector out(values.rows());
  for (Index i = 0; i < values.rows(); ++i) {
    const double lo = values.row(i).minCoeff();
    double sum = 0.0;
    for (Index j = 0; j < values.cols(); ++j) {
      sum += std::exp(-(values(i, j) - lo) / epsilon);
    }
    out[i] = lo - epsilon * std::log(sum);
  }
  return out;
}

TransportSolution LogSinkhorn(const DiscreteMeasure& source,
                              const AnchorGrid& target, double epsilon,
                              const IterControl& control,
                              const CostSpec& cost) {
  TransportSolution sol = RunLog(source, target, epsilon, control, cost);
  if (!control.is_fixed() && !sol.converged) {
    throw MaxIterExceeded(sol.residual, sol.iterations);
  }
  return sol;
}

TransportSolution ToTransportSolution(const ScalingState& state,
                                      double epsilon, double tolerance) {
  TransportSolution sol;
  sol.epsilon = epsilon;
  sol.f = epsilon * state.u.array().log().matrix();
  sol.f_prev = epsilon * state.u_prev.array().log().matrix();
  sol.g = epsilon * state.v.array().log().matrix();
  sol.plan = PlanPlus(state);
  sol.plan_minus = PlanMinus(state);
  sol.residual = state.residual;
  sol.iterations = state.iterations;
  sol.converged = state.residual < tolerance;
  return sol;
}

TransportSolution SolveTransport(const DiscreteMeasure& source,
                                 const AnchorGrid& target, double epsilon,
                                 const IterControl& control, SolverKind solver,
                                 const CostSpec& cost) {
  if (solver != SolverKind::kLog) {
    try {
      ScalingRun run = RunScaling(source, target, epsilon, control, cost);
      return ToTransportSolution(run.state, epsilon, control.tolerance);
    } catch (const UnderflowError&) {
      if (solver == SolverKind::kScaling) throw;
    }
  }
  return RunLog(source, target, epsilon, control, cost);
}

RowRescale RowRescale::Fit(const Vector& x) {
  if (x.size() == 0) throw InvalidInput("cannot rescale an empty row");
  if (!x.allFinite()) throw InvalidInput("row has non-finite entries");
  RowRescale r;
  const double lo = x.minCoeff(&r.argmin);
  const double hi = x.maxCoeff(&r.argmax);
  r.offset = lo;
  r.width = hi - lo;
  r.degenerate = !(r.width > 0.0);
  if (r.degenerate) r.width = 0.0;
  return r;
}

RowRescale RowRescale::Identity() {
  RowRescale r;
  r.identity = true;
  r.width = 1.0;
  return r;
}

Vector RowRescale::Apply(const Vector& x) const {
  if (identity) return x;
  if (degenerate) return Vector::Constant(x.size(), 0.5);
  Vector out = ((x.array() - offset) / width).matrix();
  // Exact endpoints regardless of rounding in the division.
  out[argmin] = 0.0;
  out[argmax] = 1.0;
  return out;
}

Vector RowRescale::Backprop(const Vector& grad_rescaled,
                            const Vector& rescaled) const {
  if (identity) return grad_rescaled;
  if (degenerate) return Vector::Zero(grad_rescaled.size());
  // r_i = (x_i - lo) / w with lo = x[argmin], hi = x[argmax], w = hi - lo:
  //   dr_i/dx_i = 1/w,  dr_i/dlo = (r_i - 1)/w,  dr_i/dhi = -r_i/w.
  Vector out = grad_rescaled / width;
  out[argmin] += grad_rescaled.dot((rescaled.array() - 1.0).matrix()) / width;
  out[argmax] -= grad_rescaled.dot(rescaled) / width;
  return out;
}

}  // namespace softquant
