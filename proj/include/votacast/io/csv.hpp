#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "votacast/error.hpp"

namespace votacast::io {

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

class CsvTable {
 public:
  std::string source;
  std::vector<std::string> header;
  std::vector<CsvRow> rows;

  [[nodiscard]] std::optional<std::size_t> find(std::string_view column) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == column) return i;
    return std::nullopt;
  }

  [[nodiscard]] std::size_t require(std::string_view column) const {
    if (auto i = find(column)) return *i;
    fail(ErrorKind::validation, source + ": missing column '" + std::string(column) + "'");
  }
};

/// RFC 4180 style: quoted fields may contain commas, quotes ("") and newlines.
/// Calls on_row(line, fields) for every non-blank record, header included.
template <class F>
void scan_csv(std::string_view text, const std::string& source, F&& on_row) {
  std::vector<std::string> fields;
  std::string field;
  std::size_t line = 1, row_line = 1;
  bool quoted = false, any = false;
  auto end_row = [&] {
    fields.push_back(std::move(field));
    field.clear();
    const bool blank = fields.size() == 1 && fields[0].empty();
    if (!blank) on_row(row_line, fields);
    fields.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (!any) row_line = line;
    any = true;
    if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      end_row();
      ++line;
    } else {
      field += c;
    }
  }
  if (quoted) fail(ErrorKind::validation, source + ": unterminated quoted field");
  if (any || !field.empty()) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    end_row();
  }
}

inline void clean_header(std::vector<std::string>& header) {
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
  for (auto& h : header) {
    while (!h.empty() && (h.back() == ' ' || h.back() == '\t')) h.pop_back();
    while (!h.empty() && (h.front() == ' ' || h.front() == '\t')) h.erase(0, 1);
  }
}

inline CsvTable parse_csv(std::string_view text, std::string source = "<memory>") {
  CsvTable table;
  table.source = std::move(source);
  bool first = true;
  scan_csv(text, table.source, [&](std::size_t line, std::vector<std::string>& fields) {
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      table.rows.push_back({line, std::move(fields)});
    }
  });
  clean_header(table.header);
  return table;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CsvTable read_csv(const std::string& path) {
  auto table = parse_csv(read_file(path), path);
  if (table.header.empty()) fail(ErrorKind::validation, path + ": empty file");
  return table;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::optional<long long> parse_int(std::string_view s) {
  s = trim(s);
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty() || !std::isfinite(v)) return std::nullopt;
  return v;
}

/// Shortest decimal that round-trips exactly.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string quote(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) { row(header); }

  CsvWriter& row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ += ',';
      out_ += quote(fields[i]);
    }
    out_ += '\n';
    return *this;
  }

  [[nodiscard]] const std::string& str() const { return out_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot write " + path);
    f << out_;
    if (!f) fail(ErrorKind::io, "failed writing " + path);
  }

 private:
  std::string out_;
};

/// Row-level problems found while loading one file.
struct RowErrors {
  std::string source;
  std::size_t rows = 0;
  std::vector<std::string> messages;

  void add(std::size_t line, const std::string& message) {
    messages.push_back(source + ":" + std::to_string(line) + ": " + message);
  }

  /// Aborts when more than `limit` of the rows were invalid.
  void check(double limit = 0.05) const {
    if (rows == 0) return;
    const double rate = static_cast<double>(messages.size()) / static_cast<double>(rows);
    if (rate > limit) {
      std::string msg = source + ": " + std::to_string(messages.size()) + " of " + std::to_string(rows) +
                        " rows invalid";
      for (std::size_t i = 0; i < std::min<std::size_t>(messages.size(), 5); ++i) msg += "\n  " + messages[i];
      fail(ErrorKind::validation, msg);
    }
  }
};

}  // namespace votacast::io
