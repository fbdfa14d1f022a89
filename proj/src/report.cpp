#include "xrhead/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "xrhead/errors.hpp"

namespace xrhead {

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) {
    throw DimensionError("csv row has " + std::to_string(row.size()) + " fields, header has " +
                         std::to_string(header_.size()));
  }
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  auto emit = [&out](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(row[i]);
    }
    out += "\r\n";
  };
  emit(header_);
  for (const auto& r : rows_) emit(r);
  return out;
}

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void widen(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
}

std::string open_svg(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
    << "</text>\n";
  return s.str();
}

std::string axes(const Frame& f, const std::string& x_label, const std::string& y_label, bool x_ticks) {
  std::ostringstream s;
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
    << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(f.py(y) + 4) << "\" text-anchor=\"end\">" << tick(y)
      << "</text>\n";
    if (x_ticks) {
      const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
      s << "<text x=\"" << num(f.px(x)) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
        << tick(x) << "</text>\n";
    }
  }
  s << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 18 << "\" text-anchor=\"middle\">"
    << xml_escape(x_label) << "</text>\n";
  s << "<text transform=\"translate(18," << (kTop + kHeight - kBottom) / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(y_label) << "</text>\n";
  return s.str();
}

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
  Frame f{INFINITY, -INFINITY, INFINITY, -INFINITY};
  for (const auto& s : series) {
    for (double x : s.x) f.x0 = std::min(f.x0, x), f.x1 = std::max(f.x1, x);
    for (double y : s.y) f.y0 = std::min(f.y0, y), f.y1 = std::max(f.y1, y);
  }
  if (!std::isfinite(f.x0)) f = {0, 1, 0, 1};
  widen(f.x0, f.x1);
  widen(f.y0, f.y1);
  std::string out = open_svg(title) + axes(f, x_label, y_label, true);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
      pts += num(f.px(s.x[k])) + "," + num(f.py(s.y[k])) + " ";
      out += "<circle cx=\"" + num(f.px(s.x[k])) + "\" cy=\"" + num(f.py(s.y[k])) + "\" r=\"3\" fill=\"" + color +
             "\"/>\n";
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    out += "<text x=\"" + num(kWidth - kRight - 150) + "\" y=\"" + num(kTop + 16.0 * (i + 1)) + "\" fill=\"" + color +
           "\">" + xml_escape(s.label) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values, const std::vector<double>& errors) {
  double hi = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    hi = std::max(hi, values[i] + (i < errors.size() ? errors[i] : 0.0));
  }
  Frame f{0.0, static_cast<double>(std::max<std::size_t>(values.size(), 1)), 0.0, hi > 0.0 ? hi * 1.1 : 1.0};
  std::string out = open_svg(title) + axes(f, "", "", false);
  const double slot = (kWidth - kLeft - kRight) / f.x1;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = kLeft + slot * (i + 0.15);
    const double top = f.py(values[i]);
    out += "<rect x=\"" + num(x) + "\" y=\"" + num(top) + "\" width=\"" + num(slot * 0.7) + "\" height=\"" +
           num(kHeight - kBottom - top) + "\" fill=\"" + kPalette[i % std::size(kPalette)] + "\"/>\n";
    if (i < errors.size() && errors[i] > 0.0) {
      const double cx = x + slot * 0.35;
      out += "<line x1=\"" + num(cx) + "\" y1=\"" + num(f.py(values[i] - errors[i])) + "\" x2=\"" + num(cx) +
             "\" y2=\"" + num(f.py(values[i] + errors[i])) + "\" stroke=\"black\"/>\n";
    }
    out += "<text x=\"" + num(x + slot * 0.35) + "\" y=\"" + num(kHeight - kBottom + 16) +
           "\" text-anchor=\"middle\">" + xml_escape(i < labels.size() ? labels[i] : "") + "</text>\n";
    out += "<text x=\"" + num(x + slot * 0.35) + "\" y=\"" + num(top - 4) + "\" text-anchor=\"middle\">" +
           tick(values[i]) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string svg_histogram(const std::string& title, const std::vector<double>& edges,
                          const std::vector<std::size_t>& counts) {
  if (edges.size() != counts.size() + 1) throw DimensionError("histogram needs bins+1 edges");
  std::size_t hi = 1;
  for (std::size_t c : counts) hi = std::max(hi, c);
  Frame f{edges.empty() ? 0.0 : edges.front(), edges.empty() ? 1.0 : edges.back(), 0.0, static_cast<double>(hi)};
  widen(f.x0, f.x1);
  std::string out = open_svg(title) + axes(f, "nearest-neighbour distance", "count", true);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double x = f.px(edges[i]);
    const double w = f.px(edges[i + 1]) - x;
    const double top = f.py(static_cast<double>(counts[i]));
    out += "<rect x=\"" + num(x) + "\" y=\"" + num(top) + "\" width=\"" + num(std::max(w - 1.0, 0.5)) +
           "\" height=\"" + num(kHeight - kBottom - top) + "\" fill=\"#1f77b4\"/>\n";
  }
  return out + "</svg>\n";
}

std::string svg_heat_strip(const std::string& title, const std::vector<std::vector<double>>& rows) {
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  const double cell = 18.0;
  const double w = 80 + cell * static_cast<double>(cols), h = 50 + cell * static_cast<double>(rows.size());
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"4\" y=\"16\" font-size=\"12\">" << xml_escape(title) << "</text>\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    s << "<text x=\"4\" y=\"" << num(40 + cell * r + 12) << "\">" << r << "</text>\n";
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const int shade = 255 - static_cast<int>(std::clamp(rows[r][c], 0.0, 1.0) * 255.0);
      s << "<rect x=\"" << num(40 + cell * c) << "\" y=\"" << num(40 + cell * r) << "\" width=\"" << cell
        << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << "," << shade << ",255)\"/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace xrhead
