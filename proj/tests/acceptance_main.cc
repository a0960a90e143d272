// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Usage: softquant_acceptance [criterion ...]   (default: all)
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "softquant/diagnostics.h"
#include "softquant/errors.h"
#include "softquant/factorization.h"
#include "softquant/implicit_grad.h"
#include "softquant/ot_core.h"
#include "softquant/report.h"
#include "softquant/rng.h"
#include "softquant/soft_operators.h"
#include "softquant/synth.h"
#include "test_util.h"

// Byte counter for criterion 9. Only malloc is counted; Eigen and operator
// new both go through it on glibc.
extern "C" void* __libc_malloc(std::size_t size);
namespace {
bool g_counting = false;
std::size_t g_bytes = 0;
std::size_t g_calls = 0;
}  // namespace
extern "C" void* malloc(std::size_t size) {
  if (g_counting) {
    g_bytes += size;
    ++g_calls;
  }
  return __libc_malloc(size);
}

namespace softquant {
namespace {

using Clock = std::chrono::steady_clock;
using testing::MaxAbs;
using testing::RandomInt;
using testing::RandomProbability;
using testing::RandomUniform;

double Seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

// 1. Order preservation for every iteration count.
Outcome Monotonicity() {
  const auto start = Clock::now();
  Rng rng(101);
  const std::vector<IterControl> controls = {
      IterControl::Fixed(1), IterControl::Fixed(2), IterControl::Fixed(5),
      IterControl::Fixed(50), IterControl::Tolerance(1e-9, 100000)};
  long violations = 0;
  long checks = 0;
  const auto order = [&](const Vector& x, const Vector& out) {
    for (Index i = 0; i < x.size(); ++i) {
      for (Index k = 0; k < x.size(); ++k) {
        if (x[i] > x[k]) continue;
        ++checks;
        if (out[i] > out[k] + 1e-12) ++violations;
      }
    }
  };
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = RandomInt(rng, 2, 20);
    const Index m = RandomInt(rng, 1, 12);
    const DiscreteMeasure source{RandomProbability(n, rng),
                                 RandomUniform(n, rng, -5.0, 5.0)};
    const AnchorGrid target{RandomProbability(m, rng), RegularGrid(m)};
    const TargetSpec spec{target.weights,
                          testing::Sorted(RandomUniform(m, rng, -10.0, 10.0)),
                          target.values};
    SoftOptions o;
    o.epsilon = 0.005 + 0.5 * rng.Uniform();
    for (const IterControl& control : controls) {
      o.control = control;
      const Vector sorted = SoftSort(source, target, o).output;
      for (Index j = 1; j < m; ++j) {
        ++checks;
        if (sorted[j] < sorted[j - 1] - 1e-12) ++violations;
      }
      order(source.values, SoftRank(source, target, o).output);
      order(source.values, SoftQuantileNormalize(source, spec, o).output);
    }
  }
  const double secs = Seconds(start);
  return {violations == 0 && secs < 30.0,
          Format("%ld violations in %ld checks, %.2f s", violations, checks,
                 secs)};
}

// 2. Implicit VJPs against central differences.
Outcome ImplicitGradients() {
  const auto start = Clock::now();
  GradcheckOptions options;
  options.seed = 2;
  options.instances = 50;
  options.include_factorization = false;
  const GradcheckReport report = RunGradcheck(options);
  double worst = 0.0;
  for (const CheckEntry& e : report.entries) {
    worst = std::max(worst, e.max_rel_error);
  }
  const double secs = Seconds(start);
  return {report.passed() && worst < 1e-4 && secs < 60.0,
          Format("%zu suites, max rel err %.3e, %.2f s", report.entries.size(),
                 worst, secs)};
}

// 3. Column sums of the minus plan after every iteration count.
Outcome MarginalExactness() {
  Rng rng(303);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = RandomInt(rng, 2, 30);
    const Index m = RandomInt(rng, 1, 12);
    const DiscreteMeasure source{RandomProbability(n, rng),
                                 RandomUniform(n, rng)};
    const AnchorGrid target{RandomProbability(m, rng), RegularGrid(m)};
    const double eps = 0.02 + rng.Uniform();
    for (int l = 1; l <= 50; ++l) {
      const TransportSolution t =
          LogSinkhorn(source, target, eps, IterControl::Fixed(l));
      worst = std::max(worst, MaxAbs(t.plan_minus.colwise().sum().transpose() -
                                     target.weights));
      if (eps > 0.1) {
        const ScalingState s =
            SinkhornScaling(source, target, eps, IterControl::Fixed(l));
        worst = std::max(worst, MaxAbs(PlanMinus(s).colwise().sum().transpose() -
                                       target.weights));
      }
    }
  }
  return {worst < 1e-12, Format("max column error %.3e", worst)};
}

// 4. Small epsilon against argsort oracles, n = m from 2 to 16.
Outcome HardLimit() {
  Rng rng(404);
  std::vector<double> worst_by_n(17, 0.0);
  SoftOptions o;
  o.epsilon = 1e-3;
  o.control = IterControl::Tolerance(1e-6, 1000000);
  for (Index n = 2; n <= 16; ++n) {
    for (int trial = 0; trial < 5; ++trial) {
      // Distinct values: a shuffled, jittered integer grid.
      const std::vector<Index> perm = testing::Argsort(RandomUniform(n, rng));
      Vector x(n);
      for (Index i = 0; i < n; ++i) {
        x[i] = static_cast<double>(perm[static_cast<std::size_t>(i)]) +
               0.1 * rng.Uniform();
      }
      const DiscreteMeasure source{UniformWeights(n), x};
      const AnchorGrid target = UniformGrid(n);
      const std::vector<Index> order = testing::Argsort(x);
      Vector hard_sort(n);
      Vector hard_rank(n);
      for (Index pos = 0; pos < n; ++pos) {
        hard_sort[pos] = x[order[pos]];
        hard_rank[order[pos]] = static_cast<double>(pos + 1);
      }
      const double x_range = x.maxCoeff() - x.minCoeff();
      double err = MaxAbs(SoftSort(source, target, o).output - hard_sort) / x_range;
      err = std::max(err, MaxAbs(SoftRank(source, target, o).output - hard_rank) /
                              static_cast<double>(n - 1));
      const Vector q = testing::Sorted(RandomUniform(n, rng, -5.0, 5.0));
      Vector hard_q(n);
      for (Index pos = 0; pos < n; ++pos) hard_q[order[pos]] = q[pos];
      err = std::max(err, MaxAbs(SoftQuantileNormalize(
                                     source, TargetSpec::Uniform(q), o)
                                     .output -
                                 hard_q) /
                              (q[n - 1] - q[0]));
      worst_by_n[static_cast<std::size_t>(n)] =
          std::max(worst_by_n[static_cast<std::size_t>(n)], err);
    }
  }
  std::string detail = "max err / range by n:";
  bool pass = true;
  Index first_fail = 0;
  for (Index n = 2; n <= 16; ++n) {
    const double e = worst_by_n[static_cast<std::size_t>(n)];
    if (n % 2 == 0 || n == 13 || n == 15) detail += Format(" %td:%.1e", n, e);
    if (e >= 1e-3 && pass) {
      pass = false;
      first_fail = n;
    }
  }
  if (!pass) detail += Format(" (first n over 1e-3: %td)", first_fail);
  return {pass, detail};
}

// 5. NMF descent and exact low-rank recovery.
Outcome NmfBaseline() {
  Rng rng(505);
  long increases = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = RandomInt(rng, 3, 20);
    const Index n = RandomInt(rng, 3, 20);
    Matrix x = testing::RandomNormal(d, n, rng).cwiseAbs();
    if (trial % 2 == 0) x = (x.array() * 10.0).round().matrix();
    const int k = static_cast<int>(RandomInt(rng, 1, 5));
    const NmfResult r = NmfMultiplicative(x, k, 300, 600 + trial);
    for (std::size_t t = 1; t < r.kl.size(); ++t) {
      if (r.kl[t] > r.kl[t - 1] + 1e-12) ++increases;
    }
  }
  Matrix u3(12, 3);
  Matrix v3(3, 10);
  for (Index i = 0; i < 12; ++i) {
    for (Index j = 0; j < 3; ++j) u3(i, j) = 0.1 + 2.0 * rng.Uniform();
  }
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 10; ++j) v3(i, j) = 0.1 + 2.0 * rng.Uniform();
  }
  const NmfResult exact = NmfMultiplicative(u3 * v3, 3, 20000, 7);
  const double kl = exact.kl.back();
  return {increases == 0 && kl < 1e-6,
          Format("%ld increases over 20x300 iterations, exact rank-3 KL %.3e",
                 increases, kl)};
}

Matrix ToyX() {
  SynthConfig sc;
  sc.d = 160;
  sc.n = 80;
  sc.k = 8;
  sc.seed = 0;
  return SynthGenerate(sc).x;
}

double NmfFinalKl(const Matrix& x, int rank, int iters) {
  TrainConfig c;
  c.method = Method::kNmf;
  c.rank = rank;
  c.epochs = iters;
  c.seed = 1;
  const TrainResult r = NmfTrain(x, c);
  return KlDivergence(x, Reconstruct(r.model, x));
}

// 6. Toy experiment: QMF against NMF.
Outcome ToyExperiment(TrainResult* qmf_out) {
  const auto start = Clock::now();
  const Matrix x = ToyX();
  TrainConfig c;
  c.method = Method::kQmf;
  c.rank = 8;
  c.levels = 8;
  c.epsilon = 0.01;
  c.learning_rate = 0.01;
  c.epochs = 1000;
  c.seed = 1;
  TrainResult r = QmfTrain(x, c);
  const double qmf = KlDivergence(x, Reconstruct(r.model, x));
  const double nmf = NmfFinalKl(x, 8, 1000);
  const double secs = Seconds(start);
  if (qmf_out != nullptr) *qmf_out = std::move(r);
  return {std::isfinite(qmf) && qmf < 0.25 * nmf,
          Format("QMF KL %.4g, NMF KL %.4g, ratio %.4f, %.1f s", qmf, nmf,
                 qmf / nmf, secs)};
}

// 7. Scaled-down QMFQ run.
Outcome QmfqScaledDown() {
  const auto start = Clock::now();
  SynthConfig sc;
  sc.d = 40;
  sc.n = 30;
  sc.k = 4;
  sc.seed = 0;
  const Matrix x = SynthGenerate(sc).x;
  TrainConfig c;
  c.method = Method::kQmfq;
  c.rank = 4;
  c.levels = 8;
  c.inner_iters = 50;
  c.epochs = 300;
  c.seed = 1;
  const TrainResult r = QmfqTrain(x, c);
  const double qmfq = KlDivergence(x, Reconstruct(r.model, x));
  FactorModel induced = r.model;
  induced.method = Method::kQmf;
  induced.deflate.reset();
  const double qmf_at_point = KlDivergence(x, Reconstruct(induced, x));
  const double nmf = NmfFinalKl(x, 4, 1000);
  const bool dominance = qmf_at_point <= qmfq + 1e-9;
  return {!r.diverged && qmfq < nmf && dominance,
          Format("QMFQ KL %.4g, NMF KL %.4g, QMF at induced point %.4g, %.1f s",
                 qmfq, nmf, qmf_at_point, Seconds(start))};
}

// 8. Learned pinned quantiles against the generating ones.
Outcome QuantileRecovery(const TrainResult* trained) {
  SynthConfig sc;
  sc.d = 160;
  sc.n = 80;
  sc.k = 8;
  sc.seed = 0;
  const SynthData data = SynthGenerate(sc);
  TrainResult local;
  if (trained == nullptr) {
    std::fputs("  (criterion 6 skipped, training QMF for criterion 8)\n", stdout);
    ToyExperiment(&local);
    trained = &local;
  }
  Matrix w;
  Matrix q;
  QuantileTables(trained->model, w, q);
  int good = 0;
  int good_mid = 0;
  std::vector<double> gaps;
  for (Index i = 0; i < data.x.rows(); ++i) {
    const double range = data.x.row(i).maxCoeff() - data.x.row(i).minCoeff();
    const Vector truth_row = data.q.row(i).transpose();
    double level = 0.0;
    double gap = 0.0;
    double gap_mid = 0.0;
    for (Index j = 0; j < w.cols(); ++j) {
      const double mid = level + 0.5 * w(i, j);
      level = std::min(1.0, level + w(i, j));
      gap = std::max(gap, std::abs(q(i, j) - StepQuantile(truth_row, level)));
      gap_mid = std::max(gap_mid, std::abs(q(i, j) - StepQuantile(truth_row, mid)));
    }
    const double rel = range > 0.0 ? gap / range : 0.0;
    gaps.push_back(rel);
    if (rel < 0.05) ++good;
    if (range > 0.0 && gap_mid / range < 0.05) ++good_mid;
  }
  std::sort(gaps.begin(), gaps.end());
  const double frac = static_cast<double>(good) / static_cast<double>(data.x.rows());
  return {frac >= 0.8,
          Format("%.1f%% of features within 5%% of range; median gap %.3f of "
                 "range (cell midpoint levels, not scored: %.1f%%)",
                 100.0 * frac, gaps[gaps.size() / 2],
                 100.0 * good_mid / static_cast<double>(data.x.rows()))};
}

// Bytes allocated by the implicit VJP given a solved plan.
std::size_t ImplicitBytes(const DiscreteMeasure& source,
                          const AnchorGrid& target, double eps, double tol,
                          const Matrix& h, int* ran) {
  const TransportSolution sol =
      LogSinkhorn(source, target, eps, IterControl::Tolerance(tol, 1000000));
  *ran = sol.iterations;
  g_bytes = 0;
  g_counting = true;
  {
    const VjpWorkspace ws = BuildWorkspace(sol, source.values, target);
    const Vector gx = VjpPlanWrtX(h, ws);
    const Vector gb = VjpPlanWrtB(h, ws);
    if (!gx.allFinite() || !gb.allFinite()) g_bytes = SIZE_MAX;
  }
  g_counting = false;
  return g_bytes;
}

// 9. Memory independent of iteration count, and faster than unrolling.
Outcome ImplicitSpeed() {
  const Index n = 512;
  const Index m = 10;
  Rng rng(909);
  const DiscreteMeasure source{UniformWeights(n), RandomUniform(n, rng)};
  const AnchorGrid target = UniformGrid(m);
  const Matrix h = testing::RandomNormal(n, m, rng);
  int short_iters = 0;
  int long_iters = 0;
  const std::size_t short_bytes =
      ImplicitBytes(source, target, 0.01, 1e-3, h, &short_iters);
  const std::size_t long_bytes =
      ImplicitBytes(source, target, 0.01, 1e-10, h, &long_iters);
  const double per_nm = static_cast<double>(long_bytes) /
                        (8.0 * static_cast<double>(n * m));
  const bool memory_ok = short_bytes == long_bytes && per_nm < 64.0;

  std::string detail = Format(
      "implicit alloc %zu B at l=%d, %zu B at l=%d (%.1f doubles per nm);",
      short_bytes, short_iters, long_bytes, long_iters, per_nm);
  bool speed_ok = true;
  for (Index size : {Index{512}, Index{1024}, Index{2048}}) {
    const VjpBenchRow row = BenchVjp(size, m, 0.01, 3, 9);
    const double speedup = row.unrolled_seconds / row.implicit_seconds;
    detail += Format(" n=%td l=%d speedup %.2fx", size, row.iterations, speedup);
    if (!(speedup >= 1.5)) speed_ok = false;
  }
  return {memory_ok && speed_ok, detail};
}

}  // namespace
}  // namespace softquant

int main(int argc, char** argv) {
  using namespace softquant;
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  const auto want = [&](int c) { return selected.empty() || selected.count(c) > 0; };

  TrainResult toy;
  bool have_toy = false;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, Monotonicity},
      {2, ImplicitGradients},
      {3, MarginalExactness},
      {4, HardLimit},
      {5, NmfBaseline},
      {6, [&] {
         Outcome o = ToyExperiment(&toy);
         have_toy = true;
         return o;
       }},
      {7, QmfqScaledDown},
      {8, [&] { return QuantileRecovery(have_toy ? &toy : nullptr); }},
      {9, ImplicitSpeed},
  };
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!want(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
