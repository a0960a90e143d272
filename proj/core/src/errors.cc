#include "softquant/errors.h"

#include <sstream>

namespace softquant {

MaxIterExceeded::MaxIterExceeded(double residual, int iterations)
    : Error("sinkhorn did not reach tolerance after " +
            std::to_string(iterations) +
            " iterations (residual " + std::to_string(residual) + ")"),
      residual_(residual),
      iterations_(iterations) {}

ParseError::ParseError(const std::string& what, int line)
    : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::string JoinRowErrors(
    const std::vector<std::pair<std::size_t, std::string>>& rows) {
  std::ostringstream out;
  out << rows.size() << " row(s) failed";
  for (const auto& [row, message] : rows) {
    out << "; row " << row << ": " << message;
  }
  return out.str();
}

}  // namespace

RowErrors::RowErrors(std::vector<std::pair<std::size_t, std::string>> rows)
    : Error(JoinRowErrors(rows)), rows_(std::move(rows)) {}

}  // namespace softquant
