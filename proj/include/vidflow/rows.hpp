#pragma once

// Tabular row loading: JSON arrays, newline-delimited JSON and CSV.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidflow/error.hpp"

namespace vidflow {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json parse_ndjson(std::string_view text) {
  nlohmann::json rows = nlohmann::json::array();
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        rows.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::parse_error& e) {
        throw SyntaxError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return rows;
}

namespace detail {
inline std::vector<std::string> csv_fields(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline nlohmann::json csv_value(const std::string& s) {
  if (s.empty()) return nullptr;
  char* end = nullptr;
  double d = std::strtod(s.c_str(), &end);
  if (end == s.c_str() + s.size()) return d;
  if (s == "true") return true;
  if (s == "false") return false;
  return s;
}
}  // namespace detail

/// Parses CSV with a header row; numeric-looking cells become numbers.
inline nlohmann::json parse_csv(std::string_view text) {
  nlohmann::json rows = nlohmann::json::array();
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = detail::csv_fields(line);
    if (header.empty()) {
      header = std::move(fields);
      continue;
    }
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = i < fields.size() ? detail::csv_value(fields[i]) : nlohmann::json(nullptr);
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Loads rows from `path`; `format` is "json", "ndjson", "csv" or empty
/// (inferred from the extension).
inline nlohmann::json load_rows(const std::filesystem::path& path, std::string format = {}) {
  if (format.empty()) {
    std::string ext = path.extension().string();
    format = ext == ".csv" ? "csv" : ext == ".ndjson" || ext == ".jsonl" ? "ndjson" : "json";
  }
  std::string text = read_file(path);
  if (format == "csv") return parse_csv(text);
  if (format == "ndjson") return parse_ndjson(text);
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_array()) throw SchemaError(path.string(), "expected a JSON array of rows");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw SyntaxError(path.string() + ": " + e.what());
  }
}

}  // namespace vidflow
