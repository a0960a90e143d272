#include "softquant/rng.h"

#include <cmath>
#include <numbers>

#include "softquant/errors.h"

namespace softquant {

double Rng::Uniform() {
  return static_cast<double>(Next() >> 11) * 0x1.0p-53;
}

double Rng::Normal() {
  const double u1 = Uniform();
  const double u2 = Uniform();
  return std::sqrt(-2.0 * std::log(1.0 - u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::Gamma(double shape) {
  if (!(shape > 0.0)) throw InvalidInput("gamma shape must be positive");
  if (shape < 1.0) {
    const double boosted = Gamma(shape + 1.0);
    return boosted * std::pow(1.0 - Uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double z;
    double v;
    do {
      z = Normal();
      v = 1.0 + c * z;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - Uniform();  // (0, 1]
    if (u < 1.0 - 0.0331 * z * z * z * z) return d * v;
    if (std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v))) return d * v;
  }
}

int Rng::Poisson(double lambda) {
  if (lambda < 0.0) throw InvalidInput("poisson rate must be non-negative");
  if (lambda == 0.0) return 0;
  const double u = Uniform();
  double p = std::exp(-lambda);
  double cdf = p;
  int k = 0;
  while (u >= cdf && k < 1000000) {
    ++k;
    p *= lambda / k;
    cdf += p;
    if (p == 0.0 && cdf < u) break;
  }
  return k;
}

Vector Rng::Dirichlet(const Vector& alpha) {
  Vector out(alpha.size());
  for (Index i = 0; i < alpha.size(); ++i) out[i] = Gamma(alpha[i]);
  const double total = out.sum();
  if (!(total > 0.0)) {
    // All draws underflowed (tiny shapes); fall back to a vertex.
    out.setZero();
    out[0] = 1.0;
    return out;
  }
  return out / total;
}

}  // namespace softquant
