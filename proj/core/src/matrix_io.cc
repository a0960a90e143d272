#include "softquant/matrix_io.h"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

#include "softquant/errors.h"

namespace softquant {
namespace {

std::vector<std::string> SplitFields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t begin = 0;
  while (true) {
    const std::size_t comma = line.find(',', begin);
    fields.push_back(line.substr(begin, comma - begin));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return fields;
}

double ParseNumber(const std::string& field, int line) {
  if (field.empty()) throw ParseError("empty field", line);
  errno = 0;
  char* end = nullptr;
  const double value = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size()) {
    throw ParseError("not a number: '" + field + "'", line);
  }
  if (errno == ERANGE && std::abs(value) > 1.0) {
    throw ParseError("number out of range: '" + field + "'", line);
  }
  return value;
}

Index ParseDimension(const std::string& field, int line) {
  if (field.empty()) throw ParseError("empty dimension", line);
  Index value = 0;
  for (char c : field) {
    if (c < '0' || c > '9') {
      throw ParseError("bad dimension '" + field + "'", line);
    }
    value = value * 10 + (c - '0');
    if (value > (Index{1} << 40)) throw ParseError("dimension too large", line);
  }
  return value;
}

}  // namespace

std::string FormatDouble(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string FormatMatrixCsv(const Matrix& m) {
  std::string out = std::to_string(m.rows()) + "," + std::to_string(m.cols()) +
                    "\n";
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += FormatDouble(m(i, j));
    }
    out += '\n';
  }
  return out;
}

Matrix ParseMatrixCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line)) throw ParseError("missing header", line_no);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = SplitFields(line);
  if (header.size() != 2) throw ParseError("header must be 'rows,cols'", 1);
  const Index rows = ParseDimension(header[0], 1);
  const Index cols = ParseDimension(header[1], 1);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    ++line_no;
    if (!std::getline(in, line)) {
      throw ParseError("expected " + std::to_string(rows) + " rows, found " +
                           std::to_string(i),
                       line_no);
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (cols == 0) {
      if (!line.empty()) throw ParseError("expected an empty row", line_no);
      continue;
    }
    const std::vector<std::string> fields = SplitFields(line);
    if (static_cast<Index>(fields.size()) != cols) {
      throw ParseError("expected " + std::to_string(cols) + " values, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    for (Index j = 0; j < cols; ++j) {
      m(i, j) = ParseNumber(fields[static_cast<std::size_t>(j)], line_no);
    }
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line != "\r") {
      throw ParseError("extra data after " + std::to_string(rows) + " rows",
                       line_no);
    }
  }
  return m;
}

void WriteMatrixCsv(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << FormatMatrixCsv(m);
  if (!out) throw Error("failed writing '" + path + "'");
}

Matrix ReadMatrixCsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return ParseMatrixCsv(buf.str());
}

}  // namespace softquant
