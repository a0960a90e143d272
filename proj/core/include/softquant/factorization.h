#ifndef SOFTQUANT_FACTORIZATION_H_
#define SOFTQUANT_FACTORIZATION_H_

// Low-rank nonnegative factorization with learned per-feature quantile
// transforms.
//
//   NMF   min KL(X, UV)                         (Lee-Seung updates)
//   QMF   min sum_i KL(X_i, T_i(UV)_i)          T_i pinned to [min X_i, max X_i]
//   QMFQ  min sum_i KL(X_i, T_i(Pi_k(T'(X)))_i) Pi_k = unrolled inner NMF
//
// T_i is the soft quantile normalization with weights softmax(F_i) and
// quantiles generated from R_i; U = exp(log U), V = exp(log V). All losses
// are sums of per-row generalized KL divergences, so mini-batches are
// subsets of feature rows.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softquant/ot_core.h"
#include "softquant/param_maps.h"
#include "softquant/soft_operators.h"

namespace softquant {

enum class Method { kNmf, kQmf, kQmfq };
enum class OptimizerKind { kSgd, kAdam };

const char* MethodName(Method method);
Method ParseMethod(const std::string& name);
const char* OptimizerName(OptimizerKind kind);
OptimizerKind ParseOptimizer(const std::string& name);

struct TrainConfig {
  Method method = Method::kQmf;
  int rank = 8;
  int levels = 16;  // m, target quantiles per feature
  double epsilon = 0.01;
  double learning_rate = 0.01;
  int batch_size = 0;  // features per step; 0 means all
  int epochs = 100;
  int inner_iters = 100;  // QMFQ inner NMF iterations
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  bool train_weights = true;
  double sinkhorn_tolerance = 1e-4;
  int sinkhorn_max_iter = 2000;
  double floor = 1e-12;

  void Validate(Index features) const;
  SoftOptions soft_options() const;
};

struct FactorModel {
  Method method = Method::kQmf;
  Matrix log_u;  // d x k
  Matrix log_v;  // k x n
  PrecursorSet inflate;                // pinned quantiles (QMF, QMFQ)
  std::optional<PrecursorSet> deflate;  // free quantiles (QMFQ)
  TrainConfig config;

  Matrix U() const { return FactorsFromPrecursor(log_u); }
  Matrix V() const { return FactorsFromPrecursor(log_v); }
};

struct LossCurve {
  std::vector<double> step_loss;      // per optimizer step (batch sum)
  std::vector<double> epoch_kl;       // full-data KL after each epoch
  std::vector<double> epoch_seconds;  // wall clock since training start
  std::vector<double> inner_kl;       // QMFQ: final inner KL per step
  double mean_sinkhorn_iterations = 0.0;
  std::size_t skipped_rows = 0;
};

struct TrainResult {
  FactorModel model;
  LossCurve curve;
  bool diverged = false;
  std::string message;
};

// sum_ij X log(X / Z) - X + Z with 0 log 0 = 0 and Z floored at `floor`.
// Throws InvalidInput on negative X or shape mismatch.
double KlDivergence(const Matrix& x, const Matrix& z, double floor = 1e-12);

struct NmfResult {
  Matrix u;
  Matrix v;
  std::vector<double> kl;  // kl[0] at the initial point, then per iteration
};

// Uniform(0, 1) factors scaled so mean(UV) matches `target_mean` (if > 0).
std::pair<Matrix, Matrix> NmfInit(Index rows, Index cols, int rank,
                                  std::uint64_t seed, double target_mean);

// KL multiplicative updates: U then V per iteration.
NmfResult NmfMultiplicative(const Matrix& x, int rank, int iters,
                            std::uint64_t seed, double floor = 1e-12);
NmfResult NmfMultiplicative(const Matrix& x, Matrix u, Matrix v, int iters,
                            double floor = 1e-12);

// Reverse pass through `iters` multiplicative updates started at (u0, v0):
// returns d(loss)/dY given d(loss)/dU_T and d(loss)/dV_T. The tape holds
// every iterate, O(iters (dk + kn)) doubles.
struct NmfTape {
  std::vector<Matrix> us;
  std::vector<Matrix> vs;
  std::vector<double> kl;
};
NmfTape NmfForwardTaped(const Matrix& y, const Matrix& u0, const Matrix& v0,
                        int iters, double floor);
Matrix NmfBackward(const Matrix& y, const NmfTape& tape, const Matrix& u_bar,
                   const Matrix& v_bar, double floor);

struct QmfGradients {
  double loss = 0.0;
  Matrix d_f;
  Matrix d_r;
  Matrix d_log_u;
  Matrix d_log_v;
  std::vector<Index> skipped_rows;
  double mean_iterations = 0.0;
};

// Loss and gradients over the feature rows in `batch`. Rows whose transport
// solve misses tolerance still count in the loss but contribute no gradient.
QmfGradients QmfLossAndGrad(const Matrix& x, const FactorModel& model,
                            std::span<const Index> batch);

struct QmfqGradients {
  double loss = 0.0;
  Matrix d_f;
  Matrix d_r;
  Matrix d_f_deflate;
  Matrix d_r_deflate;
  Matrix u;  // inner NMF result
  Matrix v;
  double inner_kl = 0.0;
  std::vector<Index> skipped_rows;
  double mean_iterations = 0.0;
};

// Full-batch QMFQ loss and gradients. With no deflate side in the model the
// deflation is the identity. Throws InnerDivergence if the inner KL rises.
QmfqGradients QmfqLossAndGrad(const Matrix& x, const FactorModel& model);

// Y = T'(X), the deflated matrix (X itself when the model has no deflation).
Matrix Deflate(const FactorModel& model, const Matrix& x);
// Inner projection of QMFQ: fixed-seed NMF of `y`.
NmfResult InnerProjection(const FactorModel& model, const Matrix& y);

// Plain NMF baseline packaged as a model; epochs are NMF iterations.
TrainResult NmfTrain(const Matrix& x, const TrainConfig& config);
TrainResult QmfTrain(const Matrix& x, const TrainConfig& config);
TrainResult QmfqTrain(const Matrix& x, const TrainConfig& config);
TrainResult Train(const Matrix& x, const TrainConfig& config);

// NMF: UV. QMF: T(UV). QMFQ: T(Pi_k(T'(X))). Pinned ranges come from the
// model; `x` is only read by QMFQ.
Matrix Reconstruct(const FactorModel& model, const Matrix& x);

// Per-row [min, max] of x.
std::pair<Vector, Vector> RowRanges(const Matrix& x);

}  // namespace softquant

#endif  // SOFTQUANT_FACTORIZATION_H_
