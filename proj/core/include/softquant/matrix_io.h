#ifndef SOFTQUANT_MATRIX_IO_H_
#define SOFTQUANT_MATRIX_IO_H_

// Dense CSV matrices. The first line is "rows,cols"; each following line is
// one row of comma-separated values printed with 17 significant digits, so a
// write/read cycle is bit-exact. A 0 x 0 matrix is the header alone.

#include <iosfwd>
#include <string>

#include "softquant/ot_core.h"

namespace softquant {

std::string FormatMatrixCsv(const Matrix& m);
// Throws ParseError carrying the 1-based line of the first problem.
Matrix ParseMatrixCsv(const std::string& text);

// File variants; I/O failures throw Error.
void WriteMatrixCsv(const std::string& path, const Matrix& m);
Matrix ReadMatrixCsv(const std::string& path);

std::string FormatDouble(double value);

}  // namespace softquant

#endif  // SOFTQUANT_MATRIX_IO_H_
