#pragma once

#include <string>
#include <vector>

#include "hjc/types.hpp"

namespace hjc {

// %.17g rendering: round-trips every IEEE double and is byte-stable across
// runs, which the scenario runner relies on for reproducible artifacts.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add(std::vector<double> row);
  int col(const std::string& name) const;  // -1 when absent
};

void write_csv(const CsvTable& table, const std::string& path);
CsvTable read_csv(const std::string& path);

}  // namespace hjc
