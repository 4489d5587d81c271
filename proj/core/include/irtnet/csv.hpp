#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace irtnet::csv {

/// Splits one line on commas, honouring double-quoted fields ("" escapes a quote).
/// Returns false on an unterminated quote.
bool split_line(std::string_view line, std::vector<std::string>& fields);

/// Quotes a field only when it contains a comma, quote or newline.
std::string escape(std::string_view field);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

/// Drops a trailing '\r' left by CRLF files.
inline std::string_view chomp(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace irtnet::csv
