#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace hfo {

// Shortest round-trip decimal form of a double ("0.1" stays "0.1").
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& context);
long parse_long(const std::string& s, const std::string& context);

std::string join_csv_row(const std::vector<std::string>& fields);

// Plain comma-split rows, trailing \r stripped. Fields must not contain
// commas or quotes; the writers below enforce that on the way out.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

// Writes to <path>.tmp then renames, so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace hfo
