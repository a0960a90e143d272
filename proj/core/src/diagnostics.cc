#include "softquant/diagnostics.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "softquant/errors.h"
#include "softquant/implicit_grad.h"
#include "softquant/rng.h"

namespace softquant {
namespace {

constexpr double kStep = 1e-6;

IterControl TightControl() { return IterControl::Tolerance(1e-13, 200000); }

Vector RandomProbability(Index size, Rng& rng) {
  Vector w(size);
  for (Index i = 0; i < size; ++i) w[i] = 0.5 + rng.Uniform();
  return w / w.sum();
}

Vector RandomNormal(Index size, Rng& rng, double scale = 1.0) {
  Vector v(size);
  for (Index i = 0; i < size; ++i) v[i] = scale * rng.Normal();
  return v;
}

Matrix RandomNormal(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = scale * rng.Normal();
  }
  return m;
}

// Gradient of a scalar function by central differences.
Vector ScalarFd(const std::function<double(const Vector&)>& fn,
                const Vector& point) {
  const Matrix jac = FiniteDiffJacobian(
      [&](const Vector& p) { return Vector::Constant(1, fn(p)); }, point,
      kStep);
  return jac.row(0).transpose();
}

Vector Flatten(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix Unflatten(const Vector& v, Index rows, Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

struct PlanErrors {
  double x = 0.0;
  double b = 0.0;
};

PlanErrors PlanCheck(Rng& rng, double epsilon) {
  const Index n = 3 + static_cast<Index>(rng.Uniform() * 6);
  const Index m = 2 + static_cast<Index>(rng.Uniform() * 4);
  Vector x(n);
  for (Index i = 0; i < n; ++i) x[i] = rng.Uniform();
  const Vector a = RandomProbability(n, rng);
  const Vector theta = RandomNormal(m, rng, 0.5);
  const Vector y = RegularGrid(m);
  const Matrix h = RandomNormal(n, m, rng);
  auto pairing = [&](const Vector& values, const Vector& th) {
    const AnchorGrid grid{WeightsFromPrecursor(th), y};
    const TransportSolution sol = SolveTransport(
        DiscreteMeasure{a, values}, grid, epsilon, TightControl());
    return h.cwiseProduct(sol.plan).sum();
  };
  const AnchorGrid grid{WeightsFromPrecursor(theta), y};
  const TransportSolution sol =
      SolveTransport(DiscreteMeasure{a, x}, grid, epsilon, TightControl());
  const VjpWorkspace ws = BuildWorkspace(sol, x, grid);
  PlanErrors out;
  out.x = RelativeError(
      VjpPlanWrtX(h, ws),
      ScalarFd([&](const Vector& p) { return pairing(p, theta); }, x));
  out.b = RelativeError(
      VjpWeights(VjpPlanWrtB(h, ws), grid.weights),
      ScalarFd([&](const Vector& p) { return pairing(x, p); }, theta));
  return out;
}

struct OperatorErrors {
  double x = 0.0;
  double b = 0.0;
  double q = 0.0;
};

OperatorErrors OperatorCheck(Rng& rng, double epsilon) {
  const Index n = 3 + static_cast<Index>(rng.Uniform() * 6);
  const Index m = 2 + static_cast<Index>(rng.Uniform() * 4);
  const Vector x = RandomNormal(n, rng, 2.0);
  const Vector a = RandomProbability(n, rng);
  const Vector theta = RandomNormal(m, rng, 0.5);
  const Vector q = QuantilesFree(RandomNormal(m, rng, 0.5));
  const Vector h = RandomNormal(n, rng);
  SoftOptions options;
  options.epsilon = epsilon;
  options.control = TightControl();
  auto spec_for = [&](const Vector& th, const Vector& qv) {
    TargetSpec spec;
    spec.b = WeightsFromPrecursor(th);
    spec.q = qv;
    spec.y = RegularGrid(m);
    return spec;
  };
  auto pairing = [&](const Vector& values, const Vector& th, const Vector& qv) {
    return h.dot(SoftQuantileNormalize(DiscreteMeasure{a, values},
                                       spec_for(th, qv), options)
                     .output);
  };
  const TargetSpec spec = spec_for(theta, q);
  const SoftOpResult result =
      SoftQuantileNormalize(DiscreteMeasure{a, x}, spec, options);
  const CotangentBundle cot = QuantileNormalizeVjp(result, a, spec, h);
  OperatorErrors out;
  out.x = RelativeError(
      cot.wrt_x,
      ScalarFd([&](const Vector& p) { return pairing(p, theta, q); }, x));
  out.b = RelativeError(
      VjpWeights(cot.wrt_b, spec.b),
      ScalarFd([&](const Vector& p) { return pairing(x, p, q); }, theta));
  // Central steps keep q non-decreasing since its gaps exceed 2 kStep.
  out.q = RelativeError(
      cot.wrt_q,
      ScalarFd([&](const Vector& p) { return pairing(x, theta, p); }, q));
  return out;
}

TrainConfig TightConfig(double epsilon, int rank, int levels) {
  TrainConfig config;
  config.epsilon = epsilon;
  config.rank = rank;
  config.levels = levels;
  config.sinkhorn_tolerance = 1e-13;
  config.sinkhorn_max_iter = 200000;
  return config;
}

Matrix RandomData(Index d, Index n, Rng& rng) {
  Matrix x(d, n);
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < n; ++j) x(i, j) = 0.2 + 3.0 * rng.Uniform();
  }
  return x;
}

}  // namespace

double RelativeError(const Vector& g, const Vector& fd) {
  if (g.size() != fd.size()) throw InvalidInput("gradient sizes differ");
  if (g.size() == 0) return 0.0;
  return (g - fd).lpNorm<Eigen::Infinity>() /
         std::max(fd.lpNorm<Eigen::Infinity>(), 1e-12);
}

double RelativeError(const Matrix& g, const Matrix& fd) {
  return RelativeError(Flatten(g), Flatten(fd));
}

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const CheckEntry& e) { return e.passed(); });
}

double QmfBlockErrors::max() const {
  return std::max({f, r, log_u, log_v});
}

QmfBlockErrors QmfGradientCheck(std::uint64_t seed, double epsilon, Index d,
                                Index n, int k, int m) {
  Rng rng(seed);
  const Matrix x = RandomData(d, n, rng);
  FactorModel model;
  model.method = Method::kQmf;
  model.config = TightConfig(epsilon, k, m);
  model.log_u = RandomNormal(d, k, rng, 0.5);
  model.log_v = RandomNormal(k, n, rng, 0.5);
  const auto [s, t] = RowRanges(x);
  model.inflate = InitialPrecursors(d, m, true, s, t);
  model.inflate.f = RandomNormal(d, m, rng, 0.5);
  model.inflate.r = RandomNormal(d, m - 1, rng, 0.5);

  std::vector<Index> rows(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) rows[static_cast<std::size_t>(i)] = i;
  const QmfGradients grads = QmfLossAndGrad(x, model, rows);
  if (!grads.skipped_rows.empty()) {
    throw NotConverged("gradient check instance did not converge");
  }
  auto block_fd = [&](Matrix* block) {
    Matrix& target = *block;
    const Matrix base = target;
    auto loss = [&](const Vector& p) {
      target = Unflatten(p, base.rows(), base.cols());
      const double value = QmfLossAndGrad(x, model, rows).loss;
      target = base;
      return value;
    };
    return Unflatten(ScalarFd(loss, Flatten(base)), base.rows(), base.cols());
  };
  QmfBlockErrors out;
  out.f = RelativeError(grads.d_f, block_fd(&model.inflate.f));
  out.r = RelativeError(grads.d_r, block_fd(&model.inflate.r));
  out.log_u = RelativeError(grads.d_log_u, block_fd(&model.log_u));
  out.log_v = RelativeError(grads.d_log_v, block_fd(&model.log_v));
  return out;
}

double QmfqDeflateGradientCheck(std::uint64_t seed, double epsilon,
                                int inner_iters, Index d, Index n, int k,
                                int m) {
  Rng rng(seed);
  const Matrix x = RandomData(d, n, rng);
  FactorModel model;
  model.method = Method::kQmfq;
  model.config = TightConfig(epsilon, k, m);
  model.config.inner_iters = inner_iters;
  model.config.seed = seed;
  const auto [s, t] = RowRanges(x);
  model.inflate = InitialPrecursors(d, m, true, s, t);
  model.inflate.f = RandomNormal(d, m, rng, 0.5);
  model.inflate.r = RandomNormal(d, m - 1, rng, 0.5);
  model.deflate = InitialPrecursors(d, m, false);
  model.deflate->f = RandomNormal(d, m, rng, 0.5);
  model.deflate->r = RandomNormal(d, m, rng, 0.5);

  const QmfqGradients grads = QmfqLossAndGrad(x, model);
  if (!grads.skipped_rows.empty()) {
    throw NotConverged("gradient check instance did not converge");
  }
  Matrix& r = model.deflate->r;
  const Matrix base = r;
  auto loss = [&](const Vector& p) {
    r = Unflatten(p, base.rows(), base.cols());
    const double value = QmfqLossAndGrad(x, model).loss;
    r = base;
    return value;
  };
  const Matrix fd =
      Unflatten(ScalarFd(loss, Flatten(base)), base.rows(), base.cols());
  return RelativeError(grads.d_r_deflate, fd);
}

GradcheckReport RunGradcheck(const GradcheckOptions& options) {
  Rng rng(options.seed);
  CheckEntry plan_x{"plan/x", 0.0, 1e-4, options.instances};
  CheckEntry plan_b{"plan/b", 0.0, 1e-4, options.instances};
  CheckEntry op_x{"quantile-normalize/x", 0.0, 1e-4, options.instances};
  CheckEntry op_b{"quantile-normalize/b", 0.0, 1e-4, options.instances};
  CheckEntry op_q{"quantile-normalize/q", 0.0, 1e-4, options.instances};
  for (int i = 0; i < options.instances; ++i) {
    constexpr double kEpsilons[] = {0.05, 0.1, 0.5};
    const double epsilon = kEpsilons[i % 3];
    const PlanErrors p = PlanCheck(rng, epsilon);
    plan_x.max_rel_error = std::max(plan_x.max_rel_error, p.x);
    plan_b.max_rel_error = std::max(plan_b.max_rel_error, p.b);
    const OperatorErrors o = OperatorCheck(rng, epsilon);
    op_x.max_rel_error = std::max(op_x.max_rel_error, o.x);
    op_b.max_rel_error = std::max(op_b.max_rel_error, o.b);
    op_q.max_rel_error = std::max(op_q.max_rel_error, o.q);
  }
  GradcheckReport report;
  report.entries = {plan_x, plan_b, op_x, op_b, op_q};
  if (options.include_factorization) {
    CheckEntry qmf{"qmf-loss/all-blocks", 0.0, 1e-4, options.model_instances};
    for (int i = 0; i < options.model_instances; ++i) {
      const double epsilon = i % 2 == 0 ? 0.1 : 0.05;
      qmf.max_rel_error = std::max(
          qmf.max_rel_error,
          QmfGradientCheck(options.seed * 1000 + static_cast<std::uint64_t>(i),
                           epsilon)
              .max());
    }
    CheckEntry qmfq{"qmfq-loss/deflate-r", 0.0, 1e-3, 1};
    qmfq.max_rel_error = QmfqDeflateGradientCheck(options.seed, 0.1);
    report.entries.push_back(qmf);
    report.entries.push_back(qmfq);
  }
  return report;
}

VjpBenchRow BenchVjp(Index n, Index m, double epsilon, int repeats,
                     std::uint64_t seed, double tolerance) {
  Rng rng(seed);
  Vector x(n);
  for (Index i = 0; i < n; ++i) x[i] = rng.Uniform();
  const DiscreteMeasure source{UniformWeights(n), x};
  const AnchorGrid target = UniformGrid(m);
  const Matrix h = RandomNormal(n, m, rng);
  const IterControl control = IterControl::Tolerance(tolerance, 100000);

  VjpBenchRow row;
  row.n = n;
  row.m = m;
  row.epsilon = epsilon;
  row.implicit_seconds = 1e300;
  row.unrolled_seconds = 1e300;
  using Clock = std::chrono::steady_clock;
  double sink = 0.0;
  for (int rep = 0; rep < std::max(1, repeats); ++rep) {
    auto start = Clock::now();
    const TransportSolution sol = SolveTransport(source, target, epsilon,
                                                 control, SolverKind::kScaling);
    const VjpWorkspace ws = BuildWorkspace(sol, x, target);
    const Vector gx = VjpPlanWrtX(h, ws);
    const Vector gb = VjpPlanWrtB(h, ws);
    row.implicit_seconds = std::min(
        row.implicit_seconds,
        std::chrono::duration<double>(Clock::now() - start).count());
    row.iterations = sol.iterations;
    sink += gx.sum() + gb.sum();

    start = Clock::now();
    const UnrolledVjp unrolled =
        UnrolledPlanVjp(source, target, epsilon, sol.iterations, h);
    row.unrolled_seconds = std::min(
        row.unrolled_seconds,
        std::chrono::duration<double>(Clock::now() - start).count());
    row.unrolled_tape_doubles = unrolled.tape_doubles;
    sink += unrolled.wrt_x.sum();
  }
  if (!std::isfinite(sink)) throw Error("benchmark produced non-finite output");
  return row;
}

}  // namespace softquant
