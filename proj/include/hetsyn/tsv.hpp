#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hetsyn/error.hpp"

namespace hetsyn::tsv {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view text, const std::string& where) {
  text = trim(text);
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw Error(ErrorCode::ParseError, "tsv",
                where + ": not a number: '" + std::string(text) + "'");
  }
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::ParseError, "tsv", where + ": non-finite value");
  }
  return value;
}

/// Line-oriented reader for a tab-separated file with a fixed header.
/// Blank lines are skipped; line numbers are 1-based and count the header.
class Reader {
 public:
  Reader(const std::string& path, const std::vector<std::string>& expected_header)
      : path_(path), in_(path) {
    if (!in_) throw Error(ErrorCode::IoError, "tsv", "cannot open " + path);
    std::string header;
    if (!std::getline(in_, header)) {
      throw Error(ErrorCode::ParseError, "tsv", path + ":1: missing header");
    }
    line_no_ = 1;
    auto cols = split(trim(header), '\t');
    if (cols.size() != expected_header.size()) {
      throw Error(ErrorCode::ParseError, "tsv", path + ":1: expected header '" +
                                                    join(expected_header) + "'");
    }
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (trim(cols[i]) != expected_header[i]) {
        throw Error(ErrorCode::ParseError, "tsv", path + ":1: expected header '" +
                                                      join(expected_header) + "'");
      }
    }
    width_ = expected_header.size();
  }

  /// Reads the next data row into `fields`; false at end of file.
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      const auto body = trim(line);
      if (body.empty()) continue;
      auto parts = split(body, '\t');
      if (parts.size() != width_) {
        throw Error(ErrorCode::ParseError, "tsv",
                    where() + ": expected " + std::to_string(width_) + " columns, got " +
                        std::to_string(parts.size()));
      }
      fields.assign(parts.begin(), parts.end());
      return true;
    }
    return false;
  }

  std::size_t line() const { return line_no_; }
  std::string where() const { return path_ + ":" + std::to_string(line_no_); }

 private:
  static std::string join(const std::vector<std::string>& cols) {
    std::string out;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) out += "\\t";
      out += cols[i];
    }
    return out;
  }

  std::string path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
  std::size_t width_ = 0;
};

/// Reads only the header row; used where a file admits alternative layouts.
inline std::vector<std::string> read_header(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "tsv", "cannot open " + path);
  std::string header;
  std::getline(in, header);
  std::vector<std::string> out;
  for (auto col : split(trim(header), '\t')) out.emplace_back(trim(col));
  return out;
}

/// A whole headed file, for layouts whose columns are located by name.
struct Table {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  }

  std::string where(std::size_t row) const { return path + ":" + std::to_string(lines[row]); }
};

inline Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "tsv", "cannot open " + path);
  Table t;
  t.path = path;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "tsv", path + ":1: missing header");
  for (auto col : split(trim(line), '\t')) t.header.emplace_back(trim(col));
  std::size_t no = 1;
  while (std::getline(in, line)) {
    ++no;
    const auto body = trim(line);
    if (body.empty()) continue;
    auto parts = split(body, '\t');
    if (parts.size() != t.header.size()) {
      throw Error(ErrorCode::ParseError, "tsv",
                  path + ":" + std::to_string(no) + ": expected " + std::to_string(t.header.size()) +
                      " columns, got " + std::to_string(parts.size()));
    }
    t.rows.emplace_back(parts.begin(), parts.end());
    t.lines.push_back(no);
  }
  return t;
}

}  // namespace hetsyn::tsv
