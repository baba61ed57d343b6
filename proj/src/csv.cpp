#include "awpi/csv.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace awpi::io {

std::string format_number(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

CsvBuilder::CsvBuilder(const std::vector<std::string>& header) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i > 0) {
            buffer_ += ',';
        }
        buffer_ += header[i];
    }
    buffer_ += '\n';
}

CsvBuilder& CsvBuilder::value(double x) { return text(format_number(x)); }

CsvBuilder& CsvBuilder::values(const Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        value(v(i));
    }
    return *this;
}

CsvBuilder& CsvBuilder::text(const std::string& s) {
    if (row_open_) {
        buffer_ += ',';
    }
    buffer_ += s;
    row_open_ = true;
    return *this;
}

void CsvBuilder::end_row() {
    buffer_ += '\n';
    row_open_ = false;
}

void CsvBuilder::save(const std::string& path) const { write_file_atomic(path, buffer_); }

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::filesystem::path target(path);
    if (target.has_parent_path()) {
        std::filesystem::create_directories(target.parent_path());
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open " + tmp + " for writing");
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw IoError("write failed for " + tmp);
        }
    }
    std::filesystem::rename(tmp, target);
}

std::vector<std::string> indexed_columns(const std::string& prefix, int n) {
    std::vector<std::string> out;
    for (int i = 1; i <= n; ++i) {
        out.push_back(prefix + "_" + std::to_string(i));
    }
    return out;
}

}  // namespace awpi::io
