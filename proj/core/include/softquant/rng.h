#ifndef SOFTQUANT_RNG_H_
#define SOFTQUANT_RNG_H_

// Reproducible random streams, version "mt64-v1".
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. Every variate is derived from raw 64-bit draws with the
// algorithms below (never std::*_distribution, whose output is
// implementation-defined), so a port to another language reproduces the
// same numbers:
//
//   Uniform()      (draw >> 11) * 2^-53, in [0, 1)
//   Normal()       Box-Muller, one draw pair per variate:
//                  sqrt(-2 log(1 - u1)) * cos(2 pi u2)
//   Gamma(k)       Marsaglia-Tsang for k >= 1; for k < 1,
//                  Gamma(k + 1) * (1 - u)^(1 / k)
//   Poisson(lam)   inversion by sequential search of the CDF
//   Dirichlet(al)  independent Gamma(al_i) normalized by their sum

#include <cstdint>
#include <random>

#include "softquant/ot_core.h"

namespace softquant {

inline constexpr const char* kRngVersion = "mt64-v1";

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t Next() { return engine_(); }
  double Uniform();
  double Normal();
  double Gamma(double shape);
  int Poisson(double lambda);
  Vector Dirichlet(const Vector& alpha);

 private:
  std::mt19937_64 engine_;
};

}  // namespace softquant

#endif  // SOFTQUANT_RNG_H_
