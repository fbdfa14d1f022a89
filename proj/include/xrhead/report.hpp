#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace xrhead {

/// RFC-4180 table: fields containing comma, quote, CR or LF are quoted and
/// embedded quotes doubled; lines end with CRLF.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> row);
  std::string str() const;
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string csv_escape(std::string_view field);
/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Dependency-free SVG charts.
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values, const std::vector<double>& errors = {});
std::string svg_histogram(const std::string& title, const std::vector<double>& edges,
                          const std::vector<std::size_t>& counts);
/// One row per token, one column per slot, cell shade = weight in [0, 1].
std::string svg_heat_strip(const std::string& title, const std::vector<std::vector<double>>& rows);

}  // namespace xrhead
