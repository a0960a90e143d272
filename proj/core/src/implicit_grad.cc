#include "softquant/implicit_grad.h"

#include <cmath>
#include <string>
#include <vector>

#include "softquant/errors.h"

namespace softquant {
namespace {

constexpr double kMinSchurRcond = 1e-14;

void CheckCotangent(const Matrix& h, const VjpWorkspace& ws) {
  if (h.rows() != ws.plan.rows() || h.cols() != ws.plan.cols()) {
    throw InvalidInput("cotangent shape does not match the plan");
  }
}

// w_g for the adjoint system; w_f is returned through `wf` when requested.
Vector SolveAdjoint(const Matrix& hp, const VjpWorkspace& ws, Vector* wf) {
  const Vector rf = hp.rowwise().sum();
  const Vector rg = hp.colwise().sum().transpose();
  Vector wg = ws.schur.solve(rg - ws.m1.transpose() * rf);
  if (wf != nullptr) *wf = rf - ws.m2.transpose() * wg;
  return wg;
}

}  // namespace

VjpWorkspace BuildWorkspace(const TransportSolution& solution, const Vector& x,
                            const AnchorGrid& target, const CostSpec& cost) {
  if (!solution.converged) {
    throw NotConverged(
        "implicit gradients need a converged transport solution");
  }
  const Index n = solution.plan.rows();
  const Index m = solution.plan.cols();
  if (x.size() != n || target.values.size() != m ||
      target.weights.size() != m) {
    throw InvalidInput("workspace inputs do not match the plan shape");
  }

  VjpWorkspace ws;
  ws.epsilon = solution.epsilon;
  ws.plan = solution.plan;
  ws.b = target.weights;
  ws.f = solution.f.array() - solution.f[0];
  ws.g = solution.g.array() + solution.f[0];

  const Vector row_sums = ws.plan.rowwise().sum();
  const Vector col_sums = ws.plan.colwise().sum().transpose();
  ws.m1 = row_sums.cwiseInverse().asDiagonal() * ws.plan;
  ws.m1.row(0).setZero();
  ws.m2 = col_sums.cwiseInverse().asDiagonal() * ws.plan.transpose();
  ws.delta = CostDerivativeMatrix(x, target.values, cost);

  const Matrix schur =
      Matrix::Identity(m, m) - ws.m1.transpose() * ws.m2.transpose();
  if (!schur.allFinite()) {
    throw SingularSchur("Schur complement has non-finite entries");
  }
  ws.schur.compute(schur);
  // rcond() reports 1 when a pivot is exactly zero, so check pivots too.
  const Vector pivots = ws.schur.matrixLU().diagonal().cwiseAbs();
  const double rcond = pivots.minCoeff() > kMinSchurRcond * pivots.maxCoeff()
                           ? ws.schur.rcond()
                           : 0.0;
  if (!(rcond > kMinSchurRcond)) {
    throw SingularSchur("Schur complement is numerically singular (rcond " +
                        std::to_string(rcond) + ")");
  }
  return ws;
}

Vector VjpPlanWrtX(const Matrix& h, const VjpWorkspace& ws) {
  CheckCotangent(h, ws);
  const Matrix hp = h.cwiseProduct(ws.plan);
  Vector wf;
  const Vector wg = SolveAdjoint(hp, ws, &wf);
  const Vector direct =
      (hp.array() * ws.delta.array()).rowwise().sum().matrix();
  const Vector m1_delta =
      (ws.m1.array() * ws.delta.array()).rowwise().sum().matrix();
  const Vector m2_delta =
      (ws.m2.transpose().array() * ws.delta.array()).matrix() * wg;
  return (-direct + wf.cwiseProduct(m1_delta) + m2_delta) / ws.epsilon;
}

Vector VjpPlanWrtB(const Matrix& h, const VjpWorkspace& ws) {
  CheckCotangent(h, ws);
  const Matrix hp = h.cwiseProduct(ws.plan);
  return SolveAdjoint(hp, ws, nullptr).cwiseQuotient(ws.b);
}

Vector VjpQuantileWrtQ(const Vector& h, const TransportSolution& solution,
                       const Vector& a) {
  return solution.plan.transpose() * h.cwiseQuotient(a);
}

Vector VjpQuantileWrtX(const Vector& h, const VjpWorkspace& ws,
                       const Vector& q, const Vector& a) {
  return VjpPlanWrtX(h.cwiseQuotient(a) * q.transpose(), ws);
}

Vector VjpQuantileWrtB(const Vector& h, const VjpWorkspace& ws,
                       const Vector& q, const Vector& a) {
  return VjpPlanWrtB(h.cwiseQuotient(a) * q.transpose(), ws);
}

CotangentBundle QuantileNormalizeVjp(const SoftOpResult& result,
                                     const Vector& source_weights,
                                     const TargetSpec& spec, const Vector& h,
                                     const CostSpec& cost) {
  const VjpWorkspace ws =
      BuildWorkspace(result.solution, result.cost_input, spec.grid(), cost);
  const Matrix cotangent = h.cwiseQuotient(source_weights) * spec.q.transpose();
  CotangentBundle out;
  out.wrt_x = result.rescale.Backprop(VjpPlanWrtX(cotangent, ws),
                                      result.cost_input);
  out.wrt_b = VjpPlanWrtB(cotangent, ws);
  out.wrt_q = VjpQuantileWrtQ(h, result.solution, source_weights);
  return out;
}

Matrix FiniteDiffJacobian(const std::function<Vector(const Vector&)>& fn,
                          const Vector& point, double step) {
  Matrix jac;
  Vector probe = point;
  for (Index j = 0; j < point.size(); ++j) {
    probe[j] = point[j] + step;
    const Vector hi = fn(probe);
    probe[j] = point[j] - step;
    const Vector lo = fn(probe);
    probe[j] = point[j];
    if (j == 0) jac.resize(hi.size(), point.size());
    jac.col(j) = (hi - lo) / (2.0 * step);
  }
  return jac;
}

UnrolledVjp UnrolledPlanVjp(const DiscreteMeasure& source,
                            const AnchorGrid& target, double epsilon,
                            int iterations, const Matrix& h,
                            const CostSpec& cost) {
  source.Validate();
  target.Validate();
  if (iterations < 1) throw InvalidInput("at least one iteration is required");
  const Vector& a = source.weights;
  const Vector& b = target.weights;
  const Index n = a.size();
  const Index m = b.size();
  const Matrix kernel =
      (-CostMatrix(source.values, target.values, cost) / epsilon)
          .array()
          .exp()
          .matrix();

  // us[i] = u_i for i in [0, l], vs[i] = v_{i+1}.
  std::vector<Vector> us;
  std::vector<Vector> vs;
  us.reserve(static_cast<std::size_t>(iterations) + 1);
  vs.reserve(static_cast<std::size_t>(iterations));
  us.push_back(Vector::Ones(n));
  for (int it = 0; it < iterations; ++it) {
    vs.push_back(b.cwiseQuotient(kernel.transpose() * us.back()));
    us.push_back(a.cwiseQuotient(kernel * vs.back()));
  }

  UnrolledVjp out;
  out.tape_doubles = static_cast<std::size_t>(iterations) *
                         static_cast<std::size_t>(n + m) +
                     static_cast<std::size_t>(n);
  const Vector& u_last = us.back();
  const Vector& v_last = vs.back();
  out.plan = u_last.asDiagonal() * kernel * v_last.asDiagonal();

  const Matrix hk = h.cwiseProduct(kernel);
  Matrix kernel_bar = u_last.asDiagonal() * h * v_last.asDiagonal();
  Vector u_bar = hk * v_last;
  Vector v_bar = hk.transpose() * u_last;
  Vector b_bar = Vector::Zero(m);
  for (int it = iterations; it >= 1; --it) {
    const Vector& u_cur = us[static_cast<std::size_t>(it)];
    const Vector& u_before = us[static_cast<std::size_t>(it - 1)];
    const Vector& v_cur = vs[static_cast<std::size_t>(it - 1)];
    // u_i = a / s with s = K v_i.
    const Vector s = a.cwiseQuotient(u_cur);
    const Vector s_bar = -u_bar.cwiseProduct(u_cur).cwiseQuotient(s);
    v_bar += kernel.transpose() * s_bar;
    kernel_bar.noalias() += s_bar * v_cur.transpose();
    // v_i = b / t with t = K^T u_{i-1}.
    const Vector t = b.cwiseQuotient(v_cur);
    const Vector t_bar = -v_bar.cwiseProduct(v_cur).cwiseQuotient(t);
    b_bar += v_bar.cwiseQuotient(t);
    u_bar = kernel * t_bar;
    kernel_bar.noalias() += u_before * t_bar.transpose();
    v_bar.setZero();
  }
  // K = exp(-C / eps), C_ij = c(x_i, y_j).
  const Matrix cost_bar = -kernel_bar.cwiseProduct(kernel) / epsilon;
  const Matrix delta = CostDerivativeMatrix(source.values, target.values, cost);
  out.wrt_x = cost_bar.cwiseProduct(delta).rowwise().sum();
  out.wrt_b = b_bar;
  return out;
}

}  // namespace softquant
