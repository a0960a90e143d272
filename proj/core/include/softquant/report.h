#ifndef SOFTQUANT_REPORT_H_
#define SOFTQUANT_REPORT_H_

// JSON run reports. Layout (schema "softquant-report-v1"):
//
//   format, rng            schema and RNG stream versions
//   config                 every TrainConfig field, method and optimizer
//                          as strings
//   data                   rows, cols, input path
//   final_kl, diverged, message
//   curve                  step_loss, epoch_kl, epoch_seconds, inner_kl
//   timing                 total_seconds
//   solver                 mean_sinkhorn_iterations, skipped_rows
//   quantiles              weights (B) and values (Q), one array per feature
//   model                  log_u, log_v, inflate {f, r, s, t, pinned},
//                          deflate (null unless QMFQ)
//
// Matrices are arrays of row arrays. Non-finite numbers are written as
// null. Doubles are printed in shortest round-trip form, so reading a
// report back reproduces every value exactly.

#include <string>

#include "softquant/factorization.h"

namespace softquant {

struct RunReport {
  FactorModel model;
  LossCurve curve;
  double final_kl = 0.0;
  bool diverged = false;
  std::string message;
  double total_seconds = 0.0;
  Index rows = 0;
  Index cols = 0;
  std::string input;
  Matrix weights;    // d x m, B
  Matrix quantiles;  // d x m, Q
};

// final_kl is KL(X, Reconstruct(model, X)).
RunReport MakeReport(const TrainResult& result, const Matrix& x,
                     const std::string& input, double total_seconds);

// Learned b and q per feature (empty for NMF models).
void QuantileTables(const FactorModel& model, Matrix& weights,
                    Matrix& quantiles);

std::string ReportToJson(const RunReport& report);
// Throws ParseError (line of the offending byte when known).
RunReport ReportFromJson(const std::string& text);

void WriteReport(const std::string& path, const RunReport& report);
RunReport ReadReport(const std::string& path);

}  // namespace softquant

#endif  // SOFTQUANT_REPORT_H_
