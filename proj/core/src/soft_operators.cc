#include "softquant/soft_operators.h"

#include <string>
#include <utility>

#include "softquant/errors.h"
#include "softquant/parallel.h"

namespace softquant {
namespace {

void ThrowIfUnconverged(const SoftOptions& options,
                        const TransportSolution& solution) {
  if (!options.control.is_fixed() && !solution.converged) {
    throw MaxIterExceeded(solution.residual, solution.iterations);
  }
}

Vector Cumsum(const Vector& v) {
  Vector out(v.size());
  double acc = 0.0;
  for (Index i = 0; i < v.size(); ++i) {
    acc += v[i];
    out[i] = acc;
  }
  return out;
}

}  // namespace

TargetSpec TargetSpec::Uniform(const Vector& q) {
  return TargetSpec{UniformWeights(q.size()), q, RegularGrid(q.size())};
}

void TargetSpec::Validate(bool strict) const {
  grid().Validate();
  if (q.size() != b.size()) {
    throw InvalidInput("quantiles and weights differ in length");
  }
  if (!q.allFinite()) throw InvalidInput("quantiles have non-finite entries");
  for (Index j = 1; j < q.size(); ++j) {
    if (strict ? !(q[j] > q[j - 1]) : q[j] < q[j - 1]) {
      throw InvalidInput(strict ? "quantiles must be strictly increasing"
                                : "quantiles must be non-decreasing");
    }
  }
}

SoftOpResult SolveForValues(const Vector& weights, const Vector& values,
                            const AnchorGrid& target,
                            const SoftOptions& options) {
  SoftOpResult result;
  result.rescale = options.rescale == Rescale::kMinMax
                       ? RowRescale::Fit(values)
                       : RowRescale::Identity();
  result.cost_input = result.rescale.Apply(values);
  result.solution =
      SolveTransport(DiscreteMeasure{weights, result.cost_input}, target,
                     options.epsilon, options.control, options.solver,
                     options.cost);
  return result;
}

SoftOpResult SoftRank(const DiscreteMeasure& source, const AnchorGrid& target,
                      const SoftOptions& options) {
  source.Validate();
  SoftOpResult result =
      SolveForValues(source.weights, source.values, target, options);
  ThrowIfUnconverged(options, result.solution);
  const double n = static_cast<double>(source.values.size());
  result.output = n * (result.solution.plan * Cumsum(target.weights))
                          .cwiseQuotient(source.weights);
  return result;
}

SoftOpResult SoftSort(const DiscreteMeasure& source, const AnchorGrid& target,
                      const SoftOptions& options) {
  source.Validate();
  SoftOpResult result =
      SolveForValues(source.weights, source.values, target, options);
  ThrowIfUnconverged(options, result.solution);
  result.output = (result.solution.plan_minus.transpose() * source.values)
                      .cwiseQuotient(target.weights);
  return result;
}

SoftOpResult SoftQuantileNormalize(const DiscreteMeasure& source,
                                   const TargetSpec& spec,
                                   const SoftOptions& options) {
  source.Validate();
  spec.Validate(/*strict=*/false);
  SoftOpResult result =
      SolveForValues(source.weights, source.values, spec.grid(), options);
  ThrowIfUnconverged(options, result.solution);
  result.output =
      (result.solution.plan * spec.q).cwiseQuotient(source.weights);
  return result;
}

Matrix RowQuantileNormalize(const Matrix& w, std::span<const TargetSpec> specs,
                            const SoftOptions& options) {
  if (static_cast<Index>(specs.size()) != w.rows()) {
    throw InvalidInput("need one target spec per row");
  }
  Matrix out(w.rows(), w.cols());
  std::vector<std::string> failures(static_cast<std::size_t>(w.rows()));
  const Vector a = UniformWeights(w.cols());
  ParallelFor(static_cast<std::size_t>(w.rows()), [&](std::size_t i) {
    const Index row = static_cast<Index>(i);
    try {
      out.row(row) = SoftQuantileNormalize(
                         DiscreteMeasure{a, w.row(row).transpose()}, specs[i],
                         options)
                         .output.transpose();
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });
  std::vector<std::pair<std::size_t, std::string>> errors;
  for (std::size_t i = 0; i < failures.size(); ++i) {
    if (!failures[i].empty()) errors.emplace_back(i, std::move(failures[i]));
  }
  if (!errors.empty()) throw RowErrors(std::move(errors));
  return out;
}

}  // namespace softquant
