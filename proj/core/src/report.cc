#include "softquant/report.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "json.hpp"
#include "softquant/errors.h"
#include "softquant/rng.h"

namespace softquant {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "softquant-report-v1";

json Number(double value) {
  if (!std::isfinite(value)) return nullptr;
  return value;
}

double ToDouble(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}

json VectorJson(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(Number(x));
  return out;
}

json VectorJson(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(Number(v[i]));
  return out;
}

json MatrixJson(const Matrix& m) {
  json out = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(Number(m(i, j)));
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<double> StdVectorFrom(const json& j) {
  std::vector<double> out;
  for (const json& x : j) out.push_back(ToDouble(x));
  return out;
}

Vector VectorFrom(const json& j) {
  Vector out(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    out[static_cast<Index>(i)] = ToDouble(j[i]);
  }
  return out;
}

// Row arrays; `cols` disambiguates matrices with no rows.
Matrix MatrixFrom(const json& j, Index cols_if_empty = 0) {
  const auto rows = static_cast<Index>(j.size());
  const Index cols = rows == 0 ? cols_if_empty : static_cast<Index>(j[0].size());
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (static_cast<Index>(row.size()) != cols) {
      throw InvalidInput("ragged matrix in report");
    }
    for (Index c = 0; c < cols; ++c) {
      out(i, c) = ToDouble(row[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

json PrecursorJson(const PrecursorSet& set) {
  return json{{"f", MatrixJson(set.f)},
              {"r", MatrixJson(set.r)},
              {"s", VectorJson(set.s)},
              {"t", VectorJson(set.t)},
              {"pinned", set.pinned}};
}

PrecursorSet PrecursorFrom(const json& j) {
  PrecursorSet set;
  set.f = MatrixFrom(j.at("f"));
  set.r = MatrixFrom(j.at("r"));
  set.s = VectorFrom(j.at("s"));
  set.t = VectorFrom(j.at("t"));
  set.pinned = j.at("pinned").get<bool>();
  return set;
}

json ConfigJson(const TrainConfig& c) {
  return json{{"method", MethodName(c.method)},
              {"rank", c.rank},
              {"levels", c.levels},
              {"epsilon", c.epsilon},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"inner_iters", c.inner_iters},
              {"seed", c.seed},
              {"optimizer", OptimizerName(c.optimizer)},
              {"train_weights", c.train_weights},
              {"sinkhorn_tolerance", c.sinkhorn_tolerance},
              {"sinkhorn_max_iter", c.sinkhorn_max_iter},
              {"floor", c.floor}};
}

TrainConfig ConfigFrom(const json& j) {
  TrainConfig c;
  c.method = ParseMethod(j.at("method").get<std::string>());
  c.rank = j.at("rank").get<int>();
  c.levels = j.at("levels").get<int>();
  c.epsilon = j.at("epsilon").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.inner_iters = j.at("inner_iters").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.optimizer = ParseOptimizer(j.at("optimizer").get<std::string>());
  c.train_weights = j.at("train_weights").get<bool>();
  c.sinkhorn_tolerance = j.at("sinkhorn_tolerance").get<double>();
  c.sinkhorn_max_iter = j.at("sinkhorn_max_iter").get<int>();
  c.floor = j.at("floor").get<double>();
  return c;
}

int LineOf(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<int>(std::count(text.begin(),
                                         text.begin() + static_cast<long>(byte),
                                         '\n'));
}

}  // namespace

void QuantileTables(const FactorModel& model, Matrix& weights,
                    Matrix& quantiles) {
  const PrecursorSet& set = model.inflate;
  if (model.method == Method::kNmf || set.features() == 0) {
    weights.resize(0, 0);
    quantiles.resize(0, 0);
    return;
  }
  weights.resize(set.features(), set.levels());
  quantiles.resize(set.features(), set.levels());
  for (Index i = 0; i < set.features(); ++i) {
    weights.row(i) = set.Weights(i).transpose();
    quantiles.row(i) = set.Quantiles(i).transpose();
  }
}

RunReport MakeReport(const TrainResult& result, const Matrix& x,
                     const std::string& input, double total_seconds) {
  RunReport report;
  report.model = result.model;
  report.curve = result.curve;
  report.diverged = result.diverged;
  report.message = result.message;
  report.total_seconds = total_seconds;
  report.rows = x.rows();
  report.cols = x.cols();
  report.input = input;
  report.final_kl = KlDivergence(x, Reconstruct(result.model, x),
                                 result.model.config.floor);
  QuantileTables(report.model, report.weights, report.quantiles);
  return report;
}

std::string ReportToJson(const RunReport& r) {
  json j;
  j["format"] = kFormat;
  j["rng"] = kRngVersion;
  j["config"] = ConfigJson(r.model.config);
  j["data"] = json{{"rows", r.rows}, {"cols", r.cols}, {"input", r.input}};
  j["final_kl"] = Number(r.final_kl);
  j["diverged"] = r.diverged;
  j["message"] = r.message;
  j["curve"] = json{{"step_loss", VectorJson(r.curve.step_loss)},
                    {"epoch_kl", VectorJson(r.curve.epoch_kl)},
                    {"epoch_seconds", VectorJson(r.curve.epoch_seconds)},
                    {"inner_kl", VectorJson(r.curve.inner_kl)}};
  j["timing"] = json{{"total_seconds", Number(r.total_seconds)}};
  j["solver"] =
      json{{"mean_sinkhorn_iterations", Number(r.curve.mean_sinkhorn_iterations)},
           {"skipped_rows", r.curve.skipped_rows}};
  j["quantiles"] = json{{"levels", r.weights.cols()},
                        {"weights", MatrixJson(r.weights)},
                        {"values", MatrixJson(r.quantiles)}};
  json model{{"method", MethodName(r.model.method)},
             {"rank", r.model.log_u.cols()},
             {"log_u", MatrixJson(r.model.log_u)},
             {"log_v", MatrixJson(r.model.log_v)},
             {"inflate", PrecursorJson(r.model.inflate)}};
  model["deflate"] =
      r.model.deflate ? PrecursorJson(*r.model.deflate) : json(nullptr);
  j["model"] = std::move(model);
  return j.dump(2) + "\n";
}

RunReport ReportFromJson(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed report: ") + e.what(),
                     LineOf(text, e.byte == 0 ? 0 : e.byte - 1));
  }
  try {
    if (j.at("format").get<std::string>() != kFormat) {
      throw ParseError("unsupported report format", 1);
    }
    RunReport r;
    r.model.config = ConfigFrom(j.at("config"));
    const json& data = j.at("data");
    r.rows = data.at("rows").get<Index>();
    r.cols = data.at("cols").get<Index>();
    r.input = data.at("input").get<std::string>();
    r.final_kl = ToDouble(j.at("final_kl"));
    r.diverged = j.at("diverged").get<bool>();
    r.message = j.at("message").get<std::string>();
    const json& curve = j.at("curve");
    r.curve.step_loss = StdVectorFrom(curve.at("step_loss"));
    r.curve.epoch_kl = StdVectorFrom(curve.at("epoch_kl"));
    r.curve.epoch_seconds = StdVectorFrom(curve.at("epoch_seconds"));
    r.curve.inner_kl = StdVectorFrom(curve.at("inner_kl"));
    r.total_seconds = ToDouble(j.at("timing").at("total_seconds"));
    const json& solver = j.at("solver");
    r.curve.mean_sinkhorn_iterations =
        ToDouble(solver.at("mean_sinkhorn_iterations"));
    r.curve.skipped_rows = solver.at("skipped_rows").get<std::size_t>();
    const json& quantiles = j.at("quantiles");
    const Index levels = quantiles.at("levels").get<Index>();
    r.weights = MatrixFrom(quantiles.at("weights"), levels);
    r.quantiles = MatrixFrom(quantiles.at("values"), levels);
    const json& model = j.at("model");
    r.model.method = ParseMethod(model.at("method").get<std::string>());
    const Index rank = model.at("rank").get<Index>();
    r.model.log_u = MatrixFrom(model.at("log_u"), rank);
    r.model.log_v = MatrixFrom(model.at("log_v"));
    if (r.model.log_v.rows() == 0) r.model.log_v.resize(rank, r.cols);
    r.model.inflate = PrecursorFrom(model.at("inflate"));
    if (!model.at("deflate").is_null()) {
      r.model.deflate = PrecursorFrom(model.at("deflate"));
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid report: ") + e.what(), 0);
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("invalid report: ") + e.what(), 0);
  }
}

void WriteReport(const std::string& path, const RunReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << ReportToJson(report);
  if (!out) throw Error("failed writing '" + path + "'");
}

RunReport ReadReport(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return ReportFromJson(buf.str());
}

}  // namespace softquant
