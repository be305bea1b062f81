#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "edl/error.hpp"

namespace edl::io {

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, std::string_view what) {
  if (text == "nan") return NAN;
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ArgumentError(std::string(what) + ": not a number: '" + std::string(text) + "'");
  }
  return v;
}

/// Writes to a sibling temp file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DatasetError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Comma-separated text with LF line endings. Fields never need quoting.
class CsvWriter {
 public:
  explicit CsvWriter(std::initializer_list<std::string_view> header) { row_of(header); }

  CsvWriter& cell(std::string_view v) {
    if (!at_line_start_) text_ += ',';
    text_ += v;
    at_line_start_ = false;
    return *this;
  }
  CsvWriter& cell(double v) { return cell(format_double(v)); }
  CsvWriter& cell(long long v) { return cell(std::to_string(v)); }
  CsvWriter& cell(int v) { return cell(std::to_string(v)); }
  CsvWriter& cell(std::size_t v) { return cell(std::to_string(v)); }

  void end_row() {
    text_ += '\n';
    at_line_start_ = true;
  }

  const std::string& str() const { return text_; }
  void save(const std::filesystem::path& path) const { write_file_atomic(path, text_); }

 private:
  template <typename Range>
  void row_of(const Range& values) {
    for (auto v : values) cell(v);
    end_row();
  }

  std::string text_;
  bool at_line_start_ = true;
};

}  // namespace edl::io
