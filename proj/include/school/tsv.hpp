#pragma once

#include "school/common.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace school::tsv {

/// One parsed line: fields plus the 1-based line number for diagnostics.
struct Row {
    std::vector<std::string> fields;
    std::size_t line = 0;
};

/// Reads every non-empty line of a tab-separated file. Lines starting with
/// '#' are comments. Throws FormatError naming the file if it cannot be opened.
std::vector<Row> read(const std::filesystem::path& path);

std::vector<std::string> split(std::string_view line, char sep = '\t');

double parse_double(const std::string& field, const std::filesystem::path& file, std::size_t line);
long long parse_int(const std::string& field, const std::filesystem::path& file, std::size_t line);

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double value);

/// Dense matrix with one row per line.
Matrix read_matrix(const std::filesystem::path& path, Index expected_rows, Index expected_cols);
void write_matrix(std::ostream& out, const Matrix& m);
void write_matrix(const std::filesystem::path& path, const Matrix& m);

}  // namespace school::tsv
