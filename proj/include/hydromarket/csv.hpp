#pragma once

// Small CSV and file helpers shared by the table formats.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hydromarket::csv {

/// Fixed textual form for doubles so outputs are byte-reproducible.
inline std::string num(double v) {
  if (v == 0.0) v = 0.0;  // drop negative zero
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("csv: cannot parse " + what + " '" + s + "'");
  }
}

inline int to_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("csv: cannot parse " + what + " '" + s + "'");
  }
}

/// Reads rows after checking the header matches exactly.
inline std::vector<std::vector<std::string>> read(std::istream& in, const std::string& header) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty input, expected header '" + header + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw std::runtime_error("csv: expected header '" + header + "', got '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  const auto width = split(header).size();
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split(line);
    if (cells.size() != width) throw std::runtime_error("csv: wrong column count in line '" + line + "'");
    rows.push_back(std::move(cells));
  }
  return rows;
}

/// Writes via a temporary sibling and renames, so readers never observe a
/// partially written file.
inline void write_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    body(out);
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace hydromarket::csv
