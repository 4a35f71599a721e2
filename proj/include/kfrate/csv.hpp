#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace kfrate::csv {

// 17 significant digits.
std::string format(double value);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  // Column index by name; InvalidInput if absent.
  std::size_t column(std::string_view name) const;
};

void write_row(std::ostream& out, const std::vector<double>& values);
void write_header(std::ostream& out, const std::vector<std::string>& names);

Table read(std::istream& in);

}  // namespace kfrate::csv
