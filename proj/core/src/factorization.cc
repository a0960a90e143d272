#include "softquant/factorization.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "softquant/errors.h"
#include "softquant/implicit_grad.h"
#include "softquant/optimizer.h"
#include "softquant/parallel.h"
#include "softquant/rng.h"

namespace softquant {
namespace {

// Relative slack allowed before an inner NMF step counts as an increase.
constexpr double kInnerSlack = 1e-9;

double KlRow(const Vector& x, const Vector& z, double floor) {
  long double acc = 0.0L;
  for (Index j = 0; j < x.size(); ++j) {
    const double zf = std::max(z[j], floor);
    if (x[j] > 0.0) {
      acc += x[j] * std::log(x[j] / zf) - x[j] + zf;
    } else {
      acc += zf;
    }
  }
  return static_cast<double>(acc);
}

// d KL / dz, zero where the floor is active.
Vector KlCotangent(const Vector& x, const Vector& z, double floor) {
  Vector out(x.size());
  for (Index j = 0; j < x.size(); ++j) {
    out[j] = z[j] >= floor ? 1.0 - x[j] / z[j] : 0.0;
  }
  return out;
}

void CheckData(const Matrix& x) {
  if (x.rows() == 0 || x.cols() == 0) throw InvalidInput("empty data matrix");
  if (!x.allFinite()) throw InvalidInput("data matrix has non-finite entries");
  if (x.minCoeff() < 0.0) throw InvalidInput("data matrix has negative entries");
}

// Soft quantile normalization of one row onto (b, q) with the regular grid.
struct RowTransform {
  SoftOpResult result;
  AnchorGrid grid;
  Vector q;
};

RowTransform TransformRow(const Vector& values, const Vector& b,
                          const Vector& q, const SoftOptions& options) {
  RowTransform row;
  row.grid = AnchorGrid{b, RegularGrid(b.size())};
  row.q = q;
  const Vector a = UniformWeights(values.size());
  row.result = SolveForValues(a, values, row.grid, options);
  if (q.size() > 0 && q.minCoeff() == q.maxCoeff()) {
    // Degenerate row: the output is exactly the constant.
    row.result.output = Vector::Constant(values.size(), q[0]);
  } else {
    row.result.output =
        (row.result.solution.plan * q).cwiseQuotient(a);
  }
  return row;
}

// Cotangents of a row transform output: into the raw input values, into b
// (ambient) and into q. Throws NotConverged / SingularSchur.
struct RowCotangents {
  Vector values;
  Vector b;
  Vector q;
};

RowCotangents BackpropRow(const RowTransform& row, const Vector& h,
                          const CostSpec& cost, bool want_values) {
  const Vector a = UniformWeights(h.size());
  const VjpWorkspace ws =
      BuildWorkspace(row.result.solution, row.result.cost_input, row.grid,
                     cost);
  const Matrix cot = h.cwiseQuotient(a) * row.q.transpose();
  RowCotangents out;
  if (want_values) {
    out.values = row.result.rescale.Backprop(VjpPlanWrtX(cot, ws),
                                             row.result.cost_input);
  }
  out.b = VjpPlanWrtB(cot, ws);
  out.q = VjpQuantileWrtQ(h, row.result.solution, a);
  return out;
}

Matrix SafeLog(const Matrix& m) {
  return m.array().max(1e-300).log().matrix();
}

// One multiplicative half-step on U: U o ((Y / UV) V^T) / (V 1).
void UpdateU(const Matrix& y, Matrix& u, const Matrix& v, double floor) {
  const Matrix w = y.cwiseQuotient((u * v).cwiseMax(floor));
  const Vector sv = v.rowwise().sum().cwiseMax(floor);
  const Matrix num = w * v.transpose();
  u = u.cwiseProduct(num) * sv.cwiseInverse().asDiagonal();
}

// V o (U^T (Y / UV)) / (U^T 1).
void UpdateV(const Matrix& y, const Matrix& u, Matrix& v, double floor) {
  const Matrix w = y.cwiseQuotient((u * v).cwiseMax(floor));
  const Vector su = u.colwise().sum().transpose().cwiseMax(floor);
  const Matrix num = u.transpose() * w;
  v = su.cwiseInverse().asDiagonal() * v.cwiseProduct(num);
}

std::vector<Index> SortedBatch(std::span<const Index> batch, Index rows) {
  std::vector<Index> sorted(batch.begin(), batch.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw InvalidInput("feature batch has repeated rows");
  }
  for (Index i : sorted) {
    if (i < 0 || i >= rows) throw InvalidInput("feature batch row out of range");
  }
  return sorted;
}

void CheckInflate(const FactorModel& model, Index rows, Index cols) {
  if (model.log_u.rows() != rows || model.log_v.cols() != cols ||
      model.log_u.cols() != model.log_v.rows()) {
    throw InvalidInput("factor shapes do not match the data");
  }
  if (model.inflate.features() != rows) {
    throw InvalidInput("inflate precursors do not match the data");
  }
}

// Per-row outer map plus KL, shared by QMF and QMFQ.
struct OuterRow {
  double loss = 0.0;
  int iterations = 0;
  bool skipped = false;
  Vector d_values;
  Vector d_f;
  Vector d_r;
};

OuterRow OuterRowLossAndGrad(const Vector& x_row, const Vector& z_row,
                             const PrecursorSet& inflate, Index i,
                             const SoftOptions& options, double floor) {
  OuterRow out;
  const Vector b = inflate.Weights(i);
  const Vector q = inflate.Quantiles(i);
  const RowTransform row = TransformRow(z_row, b, q, options);
  out.loss = KlRow(x_row, row.result.output, floor);
  out.iterations = row.result.solution.iterations;
  out.d_values = Vector::Zero(z_row.size());
  out.d_f = Vector::Zero(inflate.f.cols());
  out.d_r = Vector::Zero(inflate.r.cols());
  if (!row.result.solution.converged) {
    out.skipped = true;
    return out;
  }
  const Vector h = KlCotangent(x_row, row.result.output, floor);
  try {
    const RowCotangents cot = BackpropRow(row, h, options.cost, true);
    out.d_values = cot.values;
    out.d_f = VjpWeights(cot.b, b);
    out.d_r = VjpQuantilesPinned(cot.q, inflate.r.row(i).transpose(),
                                 inflate.s[i], inflate.t[i]);
  } catch (const NotConverged&) {
    out.skipped = true;
  } catch (const SingularSchur&) {
    out.skipped = true;
  }
  if (!out.skipped && !(out.d_values.allFinite() && out.d_f.allFinite() &&
                        out.d_r.allFinite())) {
    out.skipped = true;
    out.d_values.setZero();
    out.d_f.setZero();
    out.d_r.setZero();
  }
  return out;
}

Matrix InflateRows(const Matrix& z, const PrecursorSet& inflate,
                   const SoftOptions& options) {
  Matrix out(z.rows(), z.cols());
  ParallelFor(static_cast<std::size_t>(z.rows()), [&](std::size_t k) {
    const Index i = static_cast<Index>(k);
    const RowTransform row =
        TransformRow(z.row(i).transpose(), inflate.Weights(i),
                     inflate.Quantiles(i), options);
    out.row(i) = row.result.output.transpose();
  });
  return out;
}

bool AllFinite(const std::vector<const Matrix*>& blocks) {
  for (const Matrix* m : blocks) {
    if (!m->allFinite()) return false;
  }
  return true;
}

double SecondsSince(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

std::vector<Index> Shuffled(Index count, Rng& rng) {
  std::vector<Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index i = count - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.Uniform() * static_cast<double>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(std::min(j, i))]);
  }
  return order;
}

}  // namespace

const char* MethodName(Method method) {
  switch (method) {
    case Method::kNmf:
      return "nmf";
    case Method::kQmf:
      return "qmf";
    case Method::kQmfq:
      return "qmfq";
  }
  return "unknown";
}

Method ParseMethod(const std::string& name) {
  if (name == "nmf") return Method::kNmf;
  if (name == "qmf") return Method::kQmf;
  if (name == "qmfq") return Method::kQmfq;
  throw InvalidInput("unknown method '" + name + "'");
}

const char* OptimizerName(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind ParseOptimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw InvalidInput("unknown optimizer '" + name + "'");
}

void TrainConfig::Validate(Index features) const {
  if (rank < 1) throw InvalidInput("rank must be positive");
  if (levels < 1) throw InvalidInput("quantile count must be positive");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InvalidInput("epsilon must be positive");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidInput("learning rate must be positive");
  }
  if (batch_size < 0 || batch_size > features) {
    throw InvalidInput("batch size must lie in [1, d] (0 for all features)");
  }
  if (epochs < 1) throw InvalidInput("epochs must be positive");
  if (inner_iters < 1) throw InvalidInput("inner iterations must be positive");
  if (!(sinkhorn_tolerance > 0.0)) {
    throw InvalidInput("sinkhorn tolerance must be positive");
  }
  if (sinkhorn_max_iter < 1) {
    throw InvalidInput("sinkhorn iteration cap must be positive");
  }
  if (!(floor > 0.0)) throw InvalidInput("floor must be positive");
}

SoftOptions TrainConfig::soft_options() const {
  SoftOptions options;
  options.epsilon = epsilon;
  options.control = IterControl::Tolerance(sinkhorn_tolerance,
                                           sinkhorn_max_iter);
  options.solver = SolverKind::kAuto;
  options.rescale = Rescale::kMinMax;
  return options;
}

double KlDivergence(const Matrix& x, const Matrix& z, double floor) {
  if (x.rows() != z.rows() || x.cols() != z.cols()) {
    throw InvalidInput("KL arguments differ in shape");
  }
  if (x.size() > 0 && x.minCoeff() < 0.0) {
    throw InvalidInput("KL data argument has a negative entry");
  }
  long double total = 0.0L;
  for (Index i = 0; i < x.rows(); ++i) {
    total += KlRow(x.row(i).transpose(), z.row(i).transpose(), floor);
  }
  return static_cast<double>(total);
}

std::pair<Vector, Vector> RowRanges(const Matrix& x) {
  return {x.rowwise().minCoeff(), x.rowwise().maxCoeff()};
}

std::pair<Matrix, Matrix> NmfInit(Index rows, Index cols, int rank,
                                  std::uint64_t seed, double target_mean) {
  if (rank < 1) throw InvalidInput("rank must be positive");
  Rng rng(seed);
  Matrix u(rows, rank);
  Matrix v(rank, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index k = 0; k < rank; ++k) u(i, k) = 0.05 + rng.Uniform();
  }
  for (Index k = 0; k < rank; ++k) {
    for (Index j = 0; j < cols; ++j) v(k, j) = 0.05 + rng.Uniform();
  }
  if (target_mean > 0.0) {
    const double mean = (u * v).mean();
    const double scale = std::sqrt(target_mean / mean);
    u *= scale;
    v *= scale;
  }
  return {u, v};
}

NmfResult NmfMultiplicative(const Matrix& x, int rank, int iters,
                            std::uint64_t seed, double floor) {
  CheckData(x);
  auto [u, v] = NmfInit(x.rows(), x.cols(), rank, seed, x.mean());
  return NmfMultiplicative(x, std::move(u), std::move(v), iters, floor);
}

NmfResult NmfMultiplicative(const Matrix& x, Matrix u, Matrix v, int iters,
                            double floor) {
  CheckData(x);
  if (u.rows() != x.rows() || v.cols() != x.cols() || u.cols() != v.rows()) {
    throw InvalidInput("initial factors do not match the data");
  }
  NmfResult result;
  result.kl.reserve(static_cast<std::size_t>(iters) + 1);
  result.kl.push_back(KlDivergence(x, u * v, floor));
  for (int t = 0; t < iters; ++t) {
    UpdateU(x, u, v, floor);
    UpdateV(x, u, v, floor);
    result.kl.push_back(KlDivergence(x, u * v, floor));
  }
  result.u = std::move(u);
  result.v = std::move(v);
  return result;
}

NmfTape NmfForwardTaped(const Matrix& y, const Matrix& u0, const Matrix& v0,
                        int iters, double floor) {
  NmfTape tape;
  tape.us.reserve(static_cast<std::size_t>(iters) + 1);
  tape.vs.reserve(static_cast<std::size_t>(iters) + 1);
  tape.us.push_back(u0);
  tape.vs.push_back(v0);
  tape.kl.push_back(KlDivergence(y, u0 * v0, floor));
  Matrix u = u0;
  Matrix v = v0;
  for (int t = 0; t < iters; ++t) {
    UpdateU(y, u, v, floor);
    UpdateV(y, u, v, floor);
    tape.us.push_back(u);
    tape.vs.push_back(v);
    tape.kl.push_back(KlDivergence(y, u * v, floor));
  }
  return tape;
}

Matrix NmfBackward(const Matrix& y, const NmfTape& tape, const Matrix& u_bar,
                   const Matrix& v_bar, double floor) {
  const Index d = y.rows();
  const Index n = y.cols();
  Matrix y_bar = Matrix::Zero(d, n);
  Matrix ub = u_bar;
  Matrix vb = v_bar;
  const std::size_t steps = tape.us.size() - 1;
  // Backprop of W = Y / max(Z, floor) given W_bar: adds into y_bar and
  // returns Z_bar.
  auto quotient_backprop = [&](const Matrix& z, const Matrix& w,
                               const Matrix& w_bar) {
    Matrix z_bar(d, n);
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i < d; ++i) {
        const double zf = std::max(z(i, j), floor);
        y_bar(i, j) += w_bar(i, j) / zf;
        z_bar(i, j) = z(i, j) >= floor ? -w_bar(i, j) * w(i, j) / zf : 0.0;
      }
    }
    return z_bar;
  };
  for (std::size_t step = steps; step-- > 0;) {
    const Matrix& u0 = tape.us[step];
    const Matrix& v0 = tape.vs[step];
    const Matrix& u1 = tape.us[step + 1];
    // V half-step: V1 = V0 o (U1^T Wb) / su, Wb = Y / (U1 V0), su = U1^T 1.
    {
      const Matrix z = u1 * v0;
      const Matrix w = y.cwiseQuotient(z.cwiseMax(floor));
      const Matrix num = u1.transpose() * w;
      const Vector su = u1.colwise().sum().transpose().cwiseMax(floor);
      const Vector inv = su.cwiseInverse();
      Matrix v0_bar = inv.asDiagonal() * vb.cwiseProduct(num);
      const Matrix num_bar = inv.asDiagonal() * vb.cwiseProduct(v0);
      const Vector su_bar =
          -(vb.cwiseProduct(v0).cwiseProduct(num)).rowwise().sum().cwiseProduct(
              inv.cwiseAbs2());
      Matrix u1_bar = ub;
      u1_bar.rowwise() += su_bar.transpose();
      const Matrix w_bar = u1 * num_bar;
      u1_bar += w * num_bar.transpose();
      const Matrix z_bar = quotient_backprop(z, w, w_bar);
      u1_bar += z_bar * v0.transpose();
      v0_bar += u1.transpose() * z_bar;
      ub = std::move(u1_bar);
      vb = std::move(v0_bar);
    }
    // U half-step: U1 = U0 o (Wa V0^T) / sv, Wa = Y / (U0 V0), sv = V0 1.
    {
      const Matrix z = u0 * v0;
      const Matrix w = y.cwiseQuotient(z.cwiseMax(floor));
      const Matrix num = w * v0.transpose();
      const Vector sv = v0.rowwise().sum().cwiseMax(floor);
      const Vector inv = sv.cwiseInverse();
      Matrix u0_bar = ub.cwiseProduct(num) * inv.asDiagonal();
      const Matrix num_bar = ub.cwiseProduct(u0) * inv.asDiagonal();
      const Vector sv_bar =
          -(ub.cwiseProduct(u0).cwiseProduct(num)).colwise().sum().transpose()
               .cwiseProduct(inv.cwiseAbs2());
      Matrix v0_bar = vb;
      v0_bar.colwise() += sv_bar;
      const Matrix w_bar = num_bar * v0;
      v0_bar += num_bar.transpose() * w;
      const Matrix z_bar = quotient_backprop(z, w, w_bar);
      u0_bar += z_bar * v0.transpose();
      v0_bar += u0.transpose() * z_bar;
      ub = std::move(u0_bar);
      vb = std::move(v0_bar);
    }
  }
  return y_bar;
}

QmfGradients QmfLossAndGrad(const Matrix& x, const FactorModel& model,
                            std::span<const Index> batch) {
  if (model.deflate) throw InvalidInput("QMF model must not have a deflate side");
  CheckInflate(model, x.rows(), x.cols());
  const std::vector<Index> rows = SortedBatch(batch, x.rows());
  const SoftOptions options = model.config.soft_options();
  const double floor = model.config.floor;
  const Matrix u = model.U();
  const Matrix v = model.V();

  std::vector<OuterRow> per_row(rows.size());
  ParallelFor(rows.size(), [&](std::size_t k) {
    const Index i = rows[k];
    per_row[k] = OuterRowLossAndGrad(x.row(i).transpose(),
                                     (u.row(i) * v).transpose(), model.inflate,
                                     i, options, floor);
  });

  QmfGradients out;
  out.d_f = Matrix::Zero(model.inflate.f.rows(), model.inflate.f.cols());
  out.d_r = Matrix::Zero(model.inflate.r.rows(), model.inflate.r.cols());
  Matrix d_u = Matrix::Zero(u.rows(), u.cols());
  Matrix d_v = Matrix::Zero(v.rows(), v.cols());
  long double loss = 0.0L;
  double iterations = 0.0;
  // Serial reduction in ascending row order keeps results independent of
  // batch order and thread count.
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index i = rows[k];
    const OuterRow& row = per_row[k];
    loss += row.loss;
    iterations += row.iterations;
    if (row.skipped) {
      out.skipped_rows.push_back(i);
      continue;
    }
    out.d_f.row(i) = row.d_f.transpose();
    out.d_r.row(i) = row.d_r.transpose();
    d_u.row(i) = (v * row.d_values).transpose();
    d_v.noalias() += u.row(i).transpose() * row.d_values.transpose();
  }
  out.loss = static_cast<double>(loss);
  out.mean_iterations = rows.empty() ? 0.0 : iterations / rows.size();
  out.d_log_u = VjpFactors(d_u, u);
  out.d_log_v = VjpFactors(d_v, v);
  return out;
}

Matrix Deflate(const FactorModel& model, const Matrix& x) {
  if (!model.deflate) return x;
  const SoftOptions options = model.config.soft_options();
  Matrix y(x.rows(), x.cols());
  ParallelFor(static_cast<std::size_t>(x.rows()), [&](std::size_t k) {
    const Index i = static_cast<Index>(k);
    const RowTransform row =
        TransformRow(x.row(i).transpose(), model.deflate->Weights(i),
                     model.deflate->Quantiles(i), options);
    y.row(i) = row.result.output.transpose();
  });
  return y;
}

NmfResult InnerProjection(const FactorModel& model, const Matrix& y) {
  auto [u0, v0] = NmfInit(y.rows(), y.cols(), model.config.rank,
                          model.config.seed, 0.0);
  return NmfMultiplicative(y, std::move(u0), std::move(v0),
                           model.config.inner_iters, model.config.floor);
}

QmfqGradients QmfqLossAndGrad(const Matrix& x, const FactorModel& model) {
  const Index d = x.rows();
  const Index n = x.cols();
  if (model.inflate.features() != d) {
    throw InvalidInput("inflate precursors do not match the data");
  }
  const SoftOptions options = model.config.soft_options();
  const double floor = model.config.floor;

  // Deflation, keeping every row transform for the backward pass.
  std::vector<RowTransform> deflated;
  Matrix y = x;
  if (model.deflate) {
    if (model.deflate->features() != d) {
      throw InvalidInput("deflate precursors do not match the data");
    }
    deflated.resize(static_cast<std::size_t>(d));
    ParallelFor(static_cast<std::size_t>(d), [&](std::size_t k) {
      const Index i = static_cast<Index>(k);
      deflated[k] = TransformRow(x.row(i).transpose(), model.deflate->Weights(i),
                                 model.deflate->Quantiles(i), options);
    });
    for (Index i = 0; i < d; ++i) {
      y.row(i) = deflated[static_cast<std::size_t>(i)].result.output.transpose();
    }
  }

  auto [u0, v0] = NmfInit(d, n, model.config.rank, model.config.seed, 0.0);
  const NmfTape tape =
      NmfForwardTaped(y, u0, v0, model.config.inner_iters, floor);
  for (std::size_t t = 1; t < tape.kl.size(); ++t) {
    const double prev = tape.kl[t - 1];
    if (!std::isfinite(tape.kl[t]) ||
        tape.kl[t] > prev + kInnerSlack * std::max(1.0, std::abs(prev))) {
      throw InnerDivergence("inner KL rose from " + std::to_string(prev) +
                            " to " + std::to_string(tape.kl[t]) +
                            " at iteration " + std::to_string(t));
    }
  }
  const Matrix& u = tape.us.back();
  const Matrix& v = tape.vs.back();
  const Matrix z = u * v;

  std::vector<OuterRow> outer(static_cast<std::size_t>(d));
  ParallelFor(static_cast<std::size_t>(d), [&](std::size_t k) {
    const Index i = static_cast<Index>(k);
    outer[k] = OuterRowLossAndGrad(x.row(i).transpose(), z.row(i).transpose(),
                                   model.inflate, i, options, floor);
  });

  QmfqGradients out;
  out.u = u;
  out.v = v;
  out.inner_kl = tape.kl.back();
  out.d_f = Matrix::Zero(model.inflate.f.rows(), model.inflate.f.cols());
  out.d_r = Matrix::Zero(model.inflate.r.rows(), model.inflate.r.cols());
  Matrix z_bar = Matrix::Zero(d, n);
  long double loss = 0.0L;
  double iterations = 0.0;
  for (Index i = 0; i < d; ++i) {
    const OuterRow& row = outer[static_cast<std::size_t>(i)];
    loss += row.loss;
    iterations += row.iterations;
    if (row.skipped) {
      out.skipped_rows.push_back(i);
      continue;
    }
    out.d_f.row(i) = row.d_f.transpose();
    out.d_r.row(i) = row.d_r.transpose();
    z_bar.row(i) = row.d_values.transpose();
  }
  out.loss = static_cast<double>(loss);
  out.mean_iterations = iterations / static_cast<double>(d);
  if (!model.deflate) return out;

  const Matrix y_bar = NmfBackward(y, tape, z_bar * v.transpose(),
                                   u.transpose() * z_bar, floor);
  const PrecursorSet& deflate = *model.deflate;
  out.d_f_deflate = Matrix::Zero(deflate.f.rows(), deflate.f.cols());
  out.d_r_deflate = Matrix::Zero(deflate.r.rows(), deflate.r.cols());
  std::vector<char> skipped(static_cast<std::size_t>(d), 0);
  ParallelFor(static_cast<std::size_t>(d), [&](std::size_t k) {
    const Index i = static_cast<Index>(k);
    const RowTransform& row = deflated[k];
    if (!row.result.solution.converged) {
      skipped[k] = 1;
      return;
    }
    try {
      const RowCotangents cot =
          BackpropRow(row, y_bar.row(i).transpose(), options.cost, false);
      const Vector df = VjpWeights(cot.b, row.grid.weights);
      const Vector dr = VjpQuantilesFree(cot.q, deflate.r.row(i).transpose());
      if (df.allFinite() && dr.allFinite()) {
        out.d_f_deflate.row(i) = df.transpose();
        out.d_r_deflate.row(i) = dr.transpose();
      } else {
        skipped[k] = 1;
      }
    } catch (const NotConverged&) {
      skipped[k] = 1;
    } catch (const SingularSchur&) {
      skipped[k] = 1;
    }
  });
  for (Index i = 0; i < d; ++i) {
    if (skipped[static_cast<std::size_t>(i)] &&
        std::find(out.skipped_rows.begin(), out.skipped_rows.end(), i) ==
            out.skipped_rows.end()) {
      out.skipped_rows.push_back(i);
    }
  }
  std::sort(out.skipped_rows.begin(), out.skipped_rows.end());
  return out;
}

Matrix Reconstruct(const FactorModel& model, const Matrix& x) {
  switch (model.method) {
    case Method::kNmf:
      return model.U() * model.V();
    case Method::kQmf:
      return InflateRows(model.U() * model.V(), model.inflate,
                         model.config.soft_options());
    case Method::kQmfq: {
      const NmfResult inner = InnerProjection(model, Deflate(model, x));
      return InflateRows(inner.u * inner.v, model.inflate,
                         model.config.soft_options());
    }
  }
  throw InvalidInput("unknown method");
}

TrainResult NmfTrain(const Matrix& x, const TrainConfig& config) {
  CheckData(x);
  config.Validate(x.rows());
  const auto start = std::chrono::steady_clock::now();
  const NmfResult nmf =
      NmfMultiplicative(x, config.rank, config.epochs, config.seed,
                        config.floor);
  TrainResult result;
  result.model.method = Method::kNmf;
  result.model.config = config;
  result.model.config.method = Method::kNmf;
  result.model.log_u = SafeLog(nmf.u);
  result.model.log_v = SafeLog(nmf.v);
  const double seconds = SecondsSince(start);
  for (std::size_t t = 1; t < nmf.kl.size(); ++t) {
    result.curve.step_loss.push_back(nmf.kl[t]);
    result.curve.epoch_kl.push_back(nmf.kl[t]);
    result.curve.epoch_seconds.push_back(seconds * static_cast<double>(t) /
                                         static_cast<double>(config.epochs));
  }
  return result;
}

TrainResult QmfTrain(const Matrix& x, const TrainConfig& config) {
  CheckData(x);
  config.Validate(x.rows());
  const Index d = x.rows();
  const Index n = x.cols();
  const auto start = std::chrono::steady_clock::now();
  Rng rng(config.seed);

  TrainResult result;
  FactorModel& model = result.model;
  model.method = Method::kQmf;
  model.config = config;
  model.config.method = Method::kQmf;
  model.log_u.resize(d, config.rank);
  model.log_v.resize(config.rank, n);
  // N(mu, 0.5^2) with E[exp] = 0.5, the mean of Uniform(0, 1).
  const double mu = std::log(0.5) - 0.125;
  for (Index i = 0; i < d; ++i) {
    for (Index k = 0; k < config.rank; ++k) {
      model.log_u(i, k) = mu + 0.5 * rng.Normal();
    }
  }
  for (Index k = 0; k < config.rank; ++k) {
    for (Index j = 0; j < n; ++j) model.log_v(k, j) = mu + 0.5 * rng.Normal();
  }
  const auto [s, t] = RowRanges(x);
  model.inflate = InitialPrecursors(d, config.levels, true, s, t);

  Optimizer optimizer(config.optimizer, config.learning_rate);
  const Index batch = config.batch_size == 0 ? d : config.batch_size;
  double iteration_sum = 0.0;
  long steps = 0;
  FactorModel last_good = model;

  for (int epoch = 0; epoch < config.epochs && !result.diverged; ++epoch) {
    std::vector<Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), Index{0});
    if (batch < d) order = Shuffled(d, rng);
    for (Index begin = 0; begin < d; begin += batch) {
      const Index end = std::min(d, begin + batch);
      const std::span<const Index> rows(order.data() + begin,
                                        static_cast<std::size_t>(end - begin));
      QmfGradients grads = QmfLossAndGrad(x, model, rows);
      if (!std::isfinite(grads.loss) ||
          !AllFinite({&grads.d_f, &grads.d_r, &grads.d_log_u,
                      &grads.d_log_v})) {
        result.diverged = true;
        result.message = "non-finite loss or gradient at epoch " +
                         std::to_string(epoch + 1);
        break;
      }
      result.curve.step_loss.push_back(grads.loss);
      result.curve.skipped_rows += grads.skipped_rows.size();
      iteration_sum += grads.mean_iterations;
      ++steps;
      std::vector<Matrix*> params = {&model.log_u, &model.log_v,
                                     &model.inflate.r};
      std::vector<const Matrix*> blocks = {&grads.d_log_u, &grads.d_log_v,
                                           &grads.d_r};
      if (config.train_weights) {
        params.push_back(&model.inflate.f);
        blocks.push_back(&grads.d_f);
      }
      optimizer.Step(params, blocks);
    }
    if (result.diverged) break;
    double kl = std::numeric_limits<double>::quiet_NaN();
    try {
      kl = KlDivergence(x, Reconstruct(model, x), config.floor);
    } catch (const Error&) {
    }
    if (!std::isfinite(kl)) {
      result.diverged = true;
      result.message = "non-finite KL after epoch " + std::to_string(epoch + 1);
      break;
    }
    last_good = model;
    result.curve.epoch_kl.push_back(kl);
    result.curve.epoch_seconds.push_back(SecondsSince(start));
  }
  if (result.diverged) model = last_good;
  result.curve.mean_sinkhorn_iterations =
      steps > 0 ? iteration_sum / static_cast<double>(steps) : 0.0;
  return result;
}

TrainResult QmfqTrain(const Matrix& x, const TrainConfig& config) {
  CheckData(x);
  config.Validate(x.rows());
  const Index d = x.rows();
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  FactorModel& model = result.model;
  model.method = Method::kQmfq;
  model.config = config;
  model.config.method = Method::kQmfq;
  model.config.batch_size = 0;
  const auto [s, t] = RowRanges(x);
  model.inflate = InitialPrecursors(d, config.levels, true, s, t);
  model.deflate = InitialPrecursors(d, config.levels, false);

  Optimizer optimizer(config.optimizer, config.learning_rate);
  double iteration_sum = 0.0;
  long steps = 0;
  FactorModel last_good = model;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    QmfqGradients grads;
    try {
      grads = QmfqLossAndGrad(x, model);
    } catch (const InnerDivergence& e) {
      result.diverged = true;
      result.message = e.what();
      break;
    } catch (const OverflowError& e) {
      result.diverged = true;
      result.message = e.what();
      break;
    }
    if (!std::isfinite(grads.loss) ||
        !AllFinite({&grads.d_f, &grads.d_r, &grads.d_f_deflate,
                    &grads.d_r_deflate})) {
      result.diverged = true;
      result.message = "non-finite loss or gradient at epoch " +
                       std::to_string(epoch + 1);
      break;
    }
    result.curve.step_loss.push_back(grads.loss);
    result.curve.inner_kl.push_back(grads.inner_kl);
    result.curve.skipped_rows += grads.skipped_rows.size();
    iteration_sum += grads.mean_iterations;
    ++steps;
    std::vector<Matrix*> params = {&model.inflate.r, &model.deflate->r};
    std::vector<const Matrix*> blocks = {&grads.d_r, &grads.d_r_deflate};
    if (config.train_weights) {
      params.push_back(&model.inflate.f);
      params.push_back(&model.deflate->f);
      blocks.push_back(&grads.d_f);
      blocks.push_back(&grads.d_f_deflate);
    }
    optimizer.Step(params, blocks);

    double kl = std::numeric_limits<double>::quiet_NaN();
    try {
      kl = KlDivergence(x, Reconstruct(model, x), config.floor);
    } catch (const Error& e) {
      result.message = e.what();
    }
    if (!std::isfinite(kl)) {
      result.diverged = true;
      if (result.message.empty()) {
        result.message = "non-finite KL after epoch " + std::to_string(epoch + 1);
      }
      break;
    }
    last_good = model;
    result.curve.epoch_kl.push_back(kl);
    result.curve.epoch_seconds.push_back(SecondsSince(start));
  }
  if (result.diverged) model = last_good;
  const NmfResult inner = InnerProjection(model, Deflate(model, x));
  model.log_u = SafeLog(inner.u);
  model.log_v = SafeLog(inner.v);
  result.curve.mean_sinkhorn_iterations =
      steps > 0 ? iteration_sum / static_cast<double>(steps) : 0.0;
  return result;
}

TrainResult Train(const Matrix& x, const TrainConfig& config) {
  switch (config.method) {
    case Method::kNmf:
      return NmfTrain(x, config);
    case Method::kQmf:
      return QmfTrain(x, config);
    case Method::kQmfq:
      return QmfqTrain(x, config);
  }
  throw InvalidInput("unknown method");
}

}  // namespace softquant
