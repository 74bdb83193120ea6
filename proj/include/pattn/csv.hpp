#ifndef PATTN_CSV_HPP
#define PATTN_CSV_HPP

#include <filesystem>
#include <iosfwd>
#include <string>

#include "pattn/linalg.hpp"

namespace pattn {

/// One row per line, comma separated, 17 significant digits so doubles
/// round-trip exactly.
void write_matrix_csv(std::ostream& os, const MatrixX<double>& m);
MatrixX<double> read_matrix_csv(std::istream& is);

void save_matrix_csv(const std::filesystem::path& path, const MatrixX<double>& m);
MatrixX<double> load_matrix_csv(const std::filesystem::path& path);

std::string format_double(double v);

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace pattn

#endif  // PATTN_CSV_HPP
