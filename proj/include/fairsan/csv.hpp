#pragma once

#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fairsan/error.hpp"

namespace fairsan {

inline std::string trim(const std::string& s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  while (begin < end && (s[begin] == ' ' || s[begin] == '\t' || s[begin] == '\r'))
    ++begin;
  while (end > begin && (s[end - 1] == ' ' || s[end - 1] == '\t' || s[end - 1] == '\r'))
    --end;
  return s.substr(begin, end - begin);
}

/// Splits one CSV line into fields. Handles double-quoted fields with ""
/// escapes; does not handle embedded newlines (none of our inputs use them).
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

struct CsvTable {
  std::vector<std::string> header;  // empty when the file had no header row
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw SchemaError("missing column: " + name);
  }
  bool has_column(const std::string& name) const {
    for (const std::string& h : header)
      if (h == name) return true;
    return false;
  }
};

inline CsvTable read_csv_stream(std::istream& in, bool has_header) {
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (first && has_header) {
      for (std::string& f : fields) f = trim(f);
      table.header = std::move(fields);
    } else {
      table.rows.push_back(std::move(fields));
    }
    first = false;
  }
  return table;
}

inline CsvTable read_csv_file(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_csv_stream(in, has_header);
}

inline std::string csv_escape(const std::string& field) {
  bool needs_quotes = false;
  for (char c : field) {
    if (c == ',' || c == '"' || c == '\n') {
      needs_quotes = true;
      break;
    }
  }
  if (!needs_quotes) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_escape(fields[i]);
  }
  out << '\n';
}

/// Shortest round-trippable decimal text for a double (printf %.17g always
/// round-trips; we keep it fixed at 17 significant digits for determinism).
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, std::size_t row_for_error) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\r')) ++pos;
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
  }
  throw RowError("row " + std::to_string(row_for_error) +
                     ": cannot parse numeric field '" + s + "'",
                 row_for_error);
}

inline long parse_long(const std::string& s, std::size_t row_for_error) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\r')) ++pos;
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
  }
  throw RowError("row " + std::to_string(row_for_error) +
                     ": cannot parse integer field '" + s + "'",
                 row_for_error);
}

}  // namespace fairsan
