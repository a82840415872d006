#pragma once

// Locale-independent CSV emission with round-trippable reals.

#include <charconv>
#include <ostream>
#include <string>
#include <string_view>

namespace bss {

/// Shortest general form with 17 significant digits, '.' decimal point.
inline std::string format_real(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  CsvWriter& field(std::string_view s) {
    sep();
    out_ << s;
    return *this;
  }
  CsvWriter& field(double x) { return field(std::string_view(format_real(x))); }
  CsvWriter& field(long long x) { return field(std::string_view(std::to_string(x))); }
  CsvWriter& field(int x) { return field(static_cast<long long>(x)); }
  void end_row() {
    out_ << '\n';
    first_ = true;
  }

 private:
  void sep() {
    if (!first_) out_ << ',';
    first_ = false;
  }
  std::ostream& out_;
  bool first_ = true;
};

}  // namespace bss
