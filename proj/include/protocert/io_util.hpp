// io_util.hpp -- text (de)serialization helpers shared by the persisted
// formats. Numbers are written with 17 significant digits so binary64 values
// round-trip exactly; the reader tracks byte offsets for error reports.
#pragma once

#include <cctype>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "protocert/common.hpp"

namespace protocert {

inline std::string format_double17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Shortest decimal that round-trips the exact binary64 value; used for CSV
/// cells so reports stay readable and byte-deterministic.
inline std::string format_double_shortest(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw validation_error("cannot write file: " + path);
  out << content;
  if (!out) throw validation_error("write failed: " + path);
}

/// Whitespace-separated token reader with byte-offset error reporting.
class TokenReader {
 public:
  explicit TokenReader(std::string content) : content_(std::move(content)) {}

  bool at_end() {
    skip_ws();
    return pos_ >= content_.size();
  }

  std::size_t offset() const { return pos_; }

  std::string next_token(const char* what) {
    skip_ws();
    if (pos_ >= content_.size())
      throw parse_error(std::string("unexpected end of file, expected ") + what, pos_);
    const std::size_t start = pos_;
    while (pos_ < content_.size() && !std::isspace(static_cast<unsigned char>(content_[pos_])))
      ++pos_;
    return content_.substr(start, pos_ - start);
  }

  void expect(const std::string& keyword) {
    const std::size_t at = after_ws();
    const std::string tok = next_token(keyword.c_str());
    if (tok != keyword)
      throw parse_error("expected '" + keyword + "', found '" + tok + "'", at);
  }

  long long read_int(const char* what) {
    const std::size_t at = after_ws();
    const std::string tok = next_token(what);
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(tok.c_str(), &end, 10);
    if (errno != 0 || end == tok.c_str() || *end != '\0')
      throw parse_error(std::string("invalid integer for ") + what + ": '" + tok + "'", at);
    return v;
  }

  std::size_t read_count(const char* what) {
    const std::size_t at = after_ws();
    const long long v = read_int(what);
    if (v < 0) throw parse_error(std::string(what) + " cannot be negative", at);
    return static_cast<std::size_t>(v);
  }

  double read_double(const char* what) {
    const std::size_t at = after_ws();
    const std::string tok = next_token(what);
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (errno == ERANGE || end == tok.c_str() || *end != '\0')
      throw parse_error(std::string("invalid number for ") + what + ": '" + tok + "'", at);
    return v;
  }

  void read_vec(Vec& out, std::size_t n, const char* what) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = read_double(what);
  }

 private:
  void skip_ws() {
    while (pos_ < content_.size() && std::isspace(static_cast<unsigned char>(content_[pos_])))
      ++pos_;
  }

  std::size_t after_ws() {
    skip_ws();
    return pos_;
  }

  std::string content_;
  std::size_t pos_ = 0;
};

}  // namespace protocert
