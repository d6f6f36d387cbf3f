#ifndef SON_CSV_HPP
#define SON_CSV_HPP

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace son {

/// Floats are persisted with 17 significant digits (round-trip exact).
inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace son

#endif  // SON_CSV_HPP
