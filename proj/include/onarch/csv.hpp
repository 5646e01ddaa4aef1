#pragma once

#include <string>
#include <vector>

namespace onarch {

// Plain comma-separated rows, no quoting (all our schemas are numeric
// plus a ticker column). Fields are whitespace-trimmed.
std::vector<std::string> split_csv_line(const std::string& line);

// Shortest round-trip decimal representation.
std::string format_double(double x);

// strtod with full-field validation.
double parse_double(const std::string& field, const std::string& context);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name, -1 when absent.
  int column(const std::string& name) const;
};

// Reads a whole CSV file; first line is the header.
CsvTable read_csv(const std::string& path);

} // namespace onarch
