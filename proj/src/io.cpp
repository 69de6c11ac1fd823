#include "hjc/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace hjc {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void CsvTable::add(std::vector<double> row) {
  require(row.size() == columns.size(), "CsvTable: row width does not match the header");
  rows.push_back(std::move(row));
}

int CsvTable::col(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  return -1;
}

void write_csv(const CsvTable& table, const std::string& path) {
  require(!table.columns.empty(), "write_csv: table has no columns");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "write_csv: cannot open " + path);
  for (size_t i = 0; i < table.columns.size(); ++i) {
    if (i) out << ',';
    out << table.columns[i];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << format_double(row[i]);
    }
    out << '\n';
  }
  require(out.good(), "write_csv: write failed for " + path);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "read_csv: cannot open " + path);
  CsvTable table;
  std::string line;
  int lineno = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, ',')) parts.push_back(cur);
    if (!s.empty() && s.back() == ',') parts.push_back("");
    return parts;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> parts = split(line);
    if (lineno == 1) {
      table.columns = parts;
      continue;
    }
    require(parts.size() == table.columns.size(),
            "read_csv: " + path + ":" + std::to_string(lineno) + ": row width mismatch");
    std::vector<double> row(parts.size());
    for (size_t i = 0; i < parts.size(); ++i) {
      char* end = nullptr;
      row[i] = std::strtod(parts[i].c_str(), &end);
      require(end != parts[i].c_str() && *end == '\0',
              "read_csv: " + path + ":" + std::to_string(lineno) + ": bad number '" + parts[i] +
                  "' in column " + table.columns[i]);
    }
    table.rows.push_back(std::move(row));
  }
  require(!table.columns.empty(), "read_csv: " + path + " is empty");
  return table;
}

}  // namespace hjc
