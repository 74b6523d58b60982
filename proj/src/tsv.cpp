#include "school/tsv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace school::tsv {

std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::vector<Row> read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open file: " + path.string());
    std::vector<Row> rows;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        rows.push_back({split(line), number});
    }
    return rows;
}

double parse_double(const std::string& field, const std::filesystem::path& file, std::size_t line) {
    // from_chars rejects leading '+' and whitespace; strtod accepts nan/inf,
    // which callers check separately.
    const char* begin = field.c_str();
    char* end = nullptr;
    const double value = std::strtod(begin, &end);
    if (field.empty() || end != begin + field.size())
        throw FormatError(file.string() + ":" + std::to_string(line) + ": not a number: '" + field + "'");
    return value;
}

long long parse_int(const std::string& field, const std::filesystem::path& file, std::size_t line) {
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
        throw FormatError(file.string() + ":" + std::to_string(line) + ": not an integer: '" + field + "'");
    return value;
}

std::string format_double(double value) {
    char buffer[64];
    const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, ptr);
}

Matrix read_matrix(const std::filesystem::path& path, Index expected_rows, Index expected_cols) {
    const auto rows = read(path);
    if (static_cast<Index>(rows.size()) != expected_rows)
        throw FormatError(path.string() + ": expected " + std::to_string(expected_rows) + " rows, found " +
                          std::to_string(rows.size()));
    Matrix m(expected_rows, expected_cols);
    for (Index i = 0; i < expected_rows; ++i) {
        const auto& row = rows[static_cast<std::size_t>(i)];
        if (static_cast<Index>(row.fields.size()) != expected_cols)
            throw FormatError(path.string() + ":" + std::to_string(row.line) + ": expected " +
                              std::to_string(expected_cols) + " columns, found " +
                              std::to_string(row.fields.size()));
        for (Index j = 0; j < expected_cols; ++j)
            m(i, j) = parse_double(row.fields[static_cast<std::size_t>(j)], path, row.line);
    }
    return m;
}

void write_matrix(std::ostream& out, const Matrix& m) {
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out << '\t';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write file: " + path.string());
    write_matrix(out, m);
}

}  // namespace school::tsv
