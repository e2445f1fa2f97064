#pragma once

// CSV and JSON emission shared by the kernel modules and the command line.

#include <cmath>
#include <iomanip>
#include <limits>
#include <locale>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace ntk {

inline constexpr const char* kVersion = "1.0.0";

/// Formats a double with 17 significant digits, '.' decimal separator.
inline std::string format_real(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

/// RFC 4180 quoting: fields containing a comma, quote or newline are quoted.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}

  /// Metadata lines start with '#', so readers can skip them with a comment option.
  void comment(const std::string& text) {
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) os_ << "# " << line << "\r\n";
  }

  void header(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) os_ << (i ? "," : "") << csv_field(names[i]);
    os_ << "\r\n";
  }

  CsvWriter& cell(double v) { return raw(format_real(v)); }
  CsvWriter& cell(long long v) { return raw(std::to_string(v)); }
  CsvWriter& cell(int v) { return raw(std::to_string(v)); }
  CsvWriter& cell(const std::string& v) { return raw(csv_field(v)); }
  CsvWriter& cell(const char* v) { return raw(csv_field(v)); }

  void end_row() {
    os_ << "\r\n";
    first_ = true;
  }

 private:
  CsvWriter& raw(const std::string& s) {
    if (!first_) os_ << ',';
    os_ << s;
    first_ = false;
    return *this;
  }

  std::ostream& os_;
  bool first_ = true;
};

/// JSON number that survives a round trip; non-finite values become strings.
inline nlohmann::json json_real(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline nlohmann::json json_reals(const std::vector<double>& vs) {
  nlohmann::json arr = nlohmann::json::array();
  for (double v : vs) arr.push_back(json_real(v));
  return arr;
}

}  // namespace ntk
