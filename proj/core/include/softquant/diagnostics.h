#ifndef SOFTQUANT_DIAGNOSTICS_H_
#define SOFTQUANT_DIAGNOSTICS_H_

// Finite-difference gradient checks and VJP timing, shared by the CLI, the
// acceptance tests and the benchmarks.

#include <cstdint>
#include <string>
#include <vector>

#include "softquant/factorization.h"

namespace softquant {

// ||g - fd||_inf / max(||fd||_inf, 1e-12).
double RelativeError(const Vector& g, const Vector& fd);
double RelativeError(const Matrix& g, const Matrix& fd);

struct CheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  int instances = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckReport {
  std::vector<CheckEntry> entries;
  bool passed() const;
};

struct GradcheckOptions {
  std::uint64_t seed = 1;
  int instances = 50;            // plan- and operator-level instances
  int model_instances = 3;       // composed QMF loss instances
  bool include_factorization = true;
};

// Transport-plan VJPs (x, b) and soft quantile normalization VJPs (x, b, q)
// on random instances, then optionally the composed QMF loss gradients and
// the QMFQ gradient in the deflate quantile precursors.
GradcheckReport RunGradcheck(const GradcheckOptions& options);

struct QmfBlockErrors {
  double f = 0.0;
  double r = 0.0;
  double log_u = 0.0;
  double log_v = 0.0;
  double max() const;
};

// Random tiny QMF instance (d x n data, rank k, m levels) with tight
// Sinkhorn tolerance; compares every gradient block of the full loss with
// central differences.
QmfBlockErrors QmfGradientCheck(std::uint64_t seed, double epsilon,
                                Index d = 4, Index n = 6, int k = 2,
                                int m = 3);

// Same for the QMFQ loss with respect to the deflate quantile precursors
// R', through `inner_iters` unrolled NMF iterations.
double QmfqDeflateGradientCheck(std::uint64_t seed, double epsilon,
                                int inner_iters = 5, Index d = 3,
                                Index n = 5, int k = 2, int m = 3);

struct VjpBenchRow {
  Index n = 0;
  Index m = 0;
  double epsilon = 0.0;
  int iterations = 0;
  double implicit_seconds = 0.0;  // forward solve + implicit VJPs
  double unrolled_seconds = 0.0;  // forward with tape + reverse pass
  std::size_t unrolled_tape_doubles = 0;
};

// Best-of-`repeats` timings on a random instance; the unrolled path runs the
// same number of iterations the converged forward solve needed.
VjpBenchRow BenchVjp(Index n, Index m, double epsilon, int repeats,
                     std::uint64_t seed, double tolerance = 1e-6);

}  // namespace softquant

#endif  // SOFTQUANT_DIAGNOSTICS_H_
