#pragma once

#include "awpi/types.hpp"

#include <string>
#include <vector>

namespace awpi::io {

/// Shortest round-trip-safe text for a double (17 significant digits).
std::string format_number(double x);

/// Builds a CSV document in memory; nothing touches disk until save().
class CsvBuilder {
public:
    explicit CsvBuilder(const std::vector<std::string>& header);

    CsvBuilder& value(double x);
    CsvBuilder& values(const Vec& v);
    CsvBuilder& text(const std::string& s);
    void end_row();

    [[nodiscard]] const std::string& str() const { return buffer_; }
    void save(const std::string& path) const;

private:
    std::string buffer_;
    bool row_open_ = false;
};

/// Writes to `path.tmp` and renames over `path`.
void write_file_atomic(const std::string& path, const std::string& content);

/// Column names `prefix_1 .. prefix_n`.
std::vector<std::string> indexed_columns(const std::string& prefix, int n);

}  // namespace awpi::io
