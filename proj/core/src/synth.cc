#include "softquant/synth.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "softquant/errors.h"
#include "softquant/param_maps.h"
#include "softquant/rng.h"

namespace softquant {

void SynthConfig::Validate() const {
  if (d < 1 || n < 1 || k < 1) throw InvalidInput("dimensions must be positive");
  if (m_star < 0) throw InvalidInput("quantile count must be non-negative");
  if (!(poisson_lambda >= 0.0) || !(dirichlet_alpha >= 0.0) ||
      !(noise_sigma >= 0.0)) {
    throw InvalidInput("lambda, alpha and sigma must be non-negative");
  }
  if (dirichlet_alpha == 0.0) {
    throw InvalidInput("dirichlet alpha must be positive to sample");
  }
}

Matrix HardQuantileNormalize(const Matrix& z, const Matrix& q) {
  if (q.rows() != z.rows()) throw InvalidInput("need one quantile row per row");
  const Index n = z.cols();
  const Index m = q.cols();
  Matrix out(z.rows(), n);
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < z.rows(); ++i) {
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index l, Index r) { return z(i, l) < z(i, r); });
    for (Index pos = 0; pos < n; ++pos) {
      // rank = pos + 1; integer form of ceil(rank m / n) - 1.
      const Index level = ((pos + 1) * m + n - 1) / n - 1;
      out(i, order[static_cast<std::size_t>(pos)]) = q(i, level);
    }
  }
  return out;
}

double StepQuantile(const Vector& q, double level) {
  const Index m = q.size();
  auto k = static_cast<Index>(std::ceil(level * static_cast<double>(m) - 1e-9)) - 1;
  k = std::clamp<Index>(k, 0, m - 1);
  return q[k];
}

SynthData SynthGenerate(const SynthConfig& config) {
  config.Validate();
  Rng rng(config.seed);
  const Index d = config.d;
  const Index n = config.n;
  const int k = config.k;
  const Index m = config.levels();

  SynthData data;
  data.u.resize(d, k);
  for (Index i = 0; i < d; ++i) {
    for (Index c = 0; c < k; ++c) {
      data.u(i, c) = rng.Poisson(config.poisson_lambda);
    }
  }
  data.v.resize(k, n);
  const Vector alpha = Vector::Constant(k, config.dirichlet_alpha);
  for (Index j = 0; j < n; ++j) data.v.col(j) = rng.Dirichlet(alpha);
  data.q.resize(d, m);
  Vector r(m);
  for (Index i = 0; i < d; ++i) {
    for (Index l = 0; l < m; ++l) r[l] = rng.Normal();
    data.q.row(i) = QuantilesFree(r).transpose();
  }
  data.x = HardQuantileNormalize(data.u * data.v, data.q);
  if (config.noise_sigma > 0.0) {
    for (Index i = 0; i < d; ++i) {
      for (Index j = 0; j < n; ++j) {
        data.x(i, j) += std::max(config.noise_sigma * rng.Normal(), 0.0);
      }
    }
  }
  return data;
}

}  // namespace softquant
