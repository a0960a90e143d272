// softquant command line: generate, factorize, gradcheck, eval, bench.
//
// Exit codes: 0 success, 1 check failure, 2 usage error, 3 data error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "softquant/diagnostics.h"
#include "softquant/errors.h"
#include "softquant/factorization.h"
#include "softquant/matrix_io.h"
#include "softquant/report.h"
#include "softquant/synth.h"

namespace sq = softquant;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kDataError = 3;

struct GenerateArgs {
  sq::SynthConfig config;
  std::string out_dir = ".";
};

struct FactorizeArgs {
  sq::TrainConfig config;
  std::string method = "qmf";
  std::string optimizer = "adam";
  bool freeze_weights = false;
  std::string input;
  std::string out = "report.json";
};

struct GradcheckArgs {
  sq::GradcheckOptions options;
  bool skip_model = false;
};

struct EvalArgs {
  std::string report;
  std::string input;
  std::string quantiles_out;
};

struct BenchArgs {
  std::vector<long> sizes = {64, 128, 256, 512, 1024};
  long m = 10;
  double epsilon = 0.01;
  int repeats = 3;
  std::uint64_t seed = 0;
  std::string out;
};

std::string JoinPath(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

int RunGenerate(const GenerateArgs& args) {
  const sq::SynthData data = sq::SynthGenerate(args.config);
  std::filesystem::create_directories(args.out_dir);
  sq::WriteMatrixCsv(JoinPath(args.out_dir, "X.csv"), data.x);
  sq::WriteMatrixCsv(JoinPath(args.out_dir, "U_star.csv"), data.u);
  sq::WriteMatrixCsv(JoinPath(args.out_dir, "V_star.csv"), data.v);
  sq::WriteMatrixCsv(JoinPath(args.out_dir, "Q_star.csv"), data.q);
  std::printf("wrote %ldx%ld X.csv and ground truth to %s\n",
              static_cast<long>(data.x.rows()), static_cast<long>(data.x.cols()),
              args.out_dir.c_str());
  return kOk;
}

int RunFactorize(FactorizeArgs args) {
  args.config.method = sq::ParseMethod(args.method);
  args.config.optimizer = sq::ParseOptimizer(args.optimizer);
  args.config.train_weights = !args.freeze_weights;
  const sq::Matrix x = sq::ReadMatrixCsv(args.input);
  const auto start = std::chrono::steady_clock::now();
  const sq::TrainResult result = sq::Train(x, args.config);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  const sq::RunReport report = sq::MakeReport(result, x, args.input, seconds);
  sq::WriteReport(args.out, report);
  std::printf("method=%s final_kl=%.10g epochs=%zu seconds=%.3f%s\n",
              sq::MethodName(args.config.method), report.final_kl,
              report.curve.epoch_kl.size(), seconds,
              report.diverged ? " (diverged)" : "");
  if (report.diverged) std::fprintf(stderr, "warning: %s\n", report.message.c_str());
  return kOk;
}

int RunGradcheck(GradcheckArgs args) {
  args.options.include_factorization = !args.skip_model;
  const sq::GradcheckReport report = sq::RunGradcheck(args.options);
  for (const sq::CheckEntry& e : report.entries) {
    std::printf("%-26s max_rel_err=%.3e tol=%.0e instances=%d %s\n",
                e.name.c_str(), e.max_rel_error, e.tolerance, e.instances,
                e.passed() ? "ok" : "FAIL");
  }
  return report.passed() ? kOk : kCheckFailed;
}

int RunEval(const EvalArgs& args) {
  const sq::RunReport report = sq::ReadReport(args.report);
  const sq::Matrix x = sq::ReadMatrixCsv(args.input);
  if (x.rows() != report.rows || x.cols() != report.cols) {
    throw sq::InvalidInput("data shape does not match the report");
  }
  const sq::Matrix z = sq::Reconstruct(report.model, x);
  const double kl = sq::KlDivergence(x, z, report.model.config.floor);
  std::printf("kl=%.10g\n", kl);
  if (!args.quantiles_out.empty()) {
    sq::Matrix weights;
    sq::Matrix quantiles;
    sq::QuantileTables(report.model, weights, quantiles);
    std::ofstream out(args.quantiles_out);
    if (!out) throw sq::Error("cannot open '" + args.quantiles_out + "'");
    out << "feature,index,level,quantile\n";
    for (sq::Index i = 0; i < weights.rows(); ++i) {
      double level = 0.0;
      for (sq::Index j = 0; j < weights.cols(); ++j) {
        level += weights(i, j);
        if (j == weights.cols() - 1) level = 1.0;
        out << i << ',' << j << ',' << sq::FormatDouble(level) << ','
            << sq::FormatDouble(quantiles(i, j)) << '\n';
      }
    }
    std::printf("wrote quantile table for %ld features to %s\n",
                static_cast<long>(weights.rows()), args.quantiles_out.c_str());
  }
  return kOk;
}

int RunBench(const BenchArgs& args) {
  std::ostringstream table;
  table << "n,m,epsilon,iterations,implicit_s,unrolled_s,speedup,tape_doubles\n";
  std::printf("%6s %4s %8s %6s %12s %12s %8s\n", "n", "m", "eps", "iters",
              "implicit_s", "unrolled_s", "speedup");
  for (long n : args.sizes) {
    const sq::VjpBenchRow row =
        sq::BenchVjp(n, args.m, args.epsilon, args.repeats, args.seed);
    const double speedup = row.unrolled_seconds / row.implicit_seconds;
    std::printf("%6ld %4ld %8.3g %6d %12.6f %12.6f %8.2f\n", n, args.m,
                args.epsilon, row.iterations, row.implicit_seconds,
                row.unrolled_seconds, speedup);
    table << n << ',' << args.m << ',' << sq::FormatDouble(args.epsilon) << ','
          << row.iterations << ',' << sq::FormatDouble(row.implicit_seconds)
          << ',' << sq::FormatDouble(row.unrolled_seconds) << ','
          << sq::FormatDouble(speedup) << ',' << row.unrolled_tape_doubles
          << '\n';
  }
  if (!args.out.empty()) {
    std::ofstream out(args.out);
    if (!out) throw sq::Error("cannot open '" + args.out + "'");
    out << table.str();
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"softquant: soft quantile normalization and factorization"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "write synthetic data");
  generate->add_option("--d", gen.config.d, "features (rows)")
      ->check(CLI::PositiveNumber);
  generate->add_option("--n", gen.config.n, "samples (columns)")
      ->check(CLI::PositiveNumber);
  generate->add_option("--k", gen.config.k, "true rank")->check(CLI::PositiveNumber);
  generate->add_option("--m-star", gen.config.m_star,
                       "true quantile count (0 = n)")
      ->check(CLI::NonNegativeNumber);
  generate->add_option("--lambda", gen.config.poisson_lambda, "Poisson rate of U*")
      ->check(CLI::NonNegativeNumber);
  generate->add_option("--alpha", gen.config.dirichlet_alpha,
                       "Dirichlet parameter of V* columns")
      ->check(CLI::PositiveNumber);
  generate->add_option("--sigma", gen.config.noise_sigma,
                       "scale of max(sigma N, 0) noise")
      ->check(CLI::NonNegativeNumber);
  generate->add_option("--seed", gen.config.seed);
  generate->add_option("--out-dir", gen.out_dir, "output directory");

  FactorizeArgs fac;
  auto* factorize = app.add_subcommand("factorize", "train a factorization");
  factorize->add_option("--method", fac.method)
      ->check(CLI::IsMember({"nmf", "qmf", "qmfq"}));
  factorize->add_option("--rank", fac.config.rank)->check(CLI::PositiveNumber);
  factorize->add_option("--quantiles", fac.config.levels, "m")
      ->check(CLI::PositiveNumber);
  factorize->add_option("--epsilon", fac.config.epsilon)
      ->check(CLI::PositiveNumber);
  factorize->add_option("--lr", fac.config.learning_rate)
      ->check(CLI::PositiveNumber);
  factorize->add_option("--batch", fac.config.batch_size,
                        "features per step (0 = all)")
      ->check(CLI::NonNegativeNumber);
  factorize->add_option("--epochs", fac.config.epochs)->check(CLI::PositiveNumber);
  factorize->add_option("--inner-iters", fac.config.inner_iters)
      ->check(CLI::PositiveNumber);
  factorize->add_option("--seed", fac.config.seed);
  factorize->add_option("--optimizer", fac.optimizer)
      ->check(CLI::IsMember({"adam", "sgd"}));
  factorize->add_flag("--freeze-weights", fac.freeze_weights,
                      "keep b uniform");
  factorize->add_option("--tolerance", fac.config.sinkhorn_tolerance,
                        "per-row Sinkhorn tolerance")
      ->check(CLI::PositiveNumber);
  factorize->add_option("--max-iter", fac.config.sinkhorn_max_iter,
                        "per-row Sinkhorn iteration cap")
      ->check(CLI::PositiveNumber);
  factorize->add_option("--input", fac.input, "data matrix CSV")->required();
  factorize->add_option("--out", fac.out, "report JSON");

  GradcheckArgs grad;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient suites");
  gradcheck->add_option("--seed", grad.options.seed);
  gradcheck->add_option("--instances", grad.options.instances)
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--model-instances", grad.options.model_instances)
      ->check(CLI::PositiveNumber);
  gradcheck->add_flag("--skip-model", grad.skip_model,
                      "only the transport and operator suites");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "score a report against data");
  eval->add_option("--report", ev.report)->required();
  eval->add_option("--input", ev.input, "data matrix CSV")->required();
  eval->add_option("--quantiles-out", ev.quantiles_out,
                   "CSV export of learned (level, quantile) pairs");

  BenchArgs bench;
  auto* bench_cmd =
      app.add_subcommand("bench", "implicit vs unrolled VJP timings");
  bench_cmd->add_option("--n", bench.sizes, "sample sizes")->delimiter(',');
  bench_cmd->add_option("--m", bench.m)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--epsilon", bench.epsilon)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--repeats", bench.repeats)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench.seed);
  bench_cmd->add_option("--out", bench.out, "CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*generate) return RunGenerate(gen);
    if (*factorize) return RunFactorize(fac);
    if (*gradcheck) return RunGradcheck(grad);
    if (*eval) return RunEval(ev);
    if (*bench_cmd) return RunBench(bench);
  } catch (const sq::ParseError& e) {
    std::fprintf(stderr, "error: %s (line %d)\n", e.what(), e.line());
    return kDataError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  }
  return kUsage;
}
