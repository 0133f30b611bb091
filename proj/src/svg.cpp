#include "dclstm/svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dclstm::svg {

namespace {

constexpr int kMargin = 48;

void minmax(const std::vector<double>& v, double* lo, double* hi) {
  for (double x : v) {
    *lo = std::min(*lo, x);
    *hi = std::max(*hi, x);
  }
}

std::string header(int width, int height, const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << title << "</text>\n";
  return os.str();
}

std::string color_for(double t) {
  // blue (low) -> yellow -> red (high)
  t = std::clamp(t, 0.0, 1.0);
  int r, g, b;
  if (t < 0.5) {
    const double u = t * 2.0;
    r = static_cast<int>(40 + u * 215);
    g = static_cast<int>(60 + u * 180);
    b = static_cast<int>(200 - u * 160);
  } else {
    const double u = (t - 0.5) * 2.0;
    r = 255;
    g = static_cast<int>(240 - u * 200);
    b = static_cast<int>(40 - u * 30);
  }
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::string line_chart(const std::string& title, const std::vector<Series>& series, int width,
                       int height) {
  double lo = 1e300, hi = -1e300;
  std::size_t n = 1;
  for (const auto& s : series) {
    minmax(s.y, &lo, &hi);
    n = std::max(n, s.y.size());
  }
  if (lo > hi) { lo = 0; hi = 1; }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double px = static_cast<double>(width - 2 * kMargin) / std::max<std::size_t>(n - 1, 1);
  const double py = static_cast<double>(height - 2 * kMargin) / (hi - lo);

  std::ostringstream os;
  os << header(width, height, title);
  os << "<line x1=\"" << kMargin << "\" y1=\"" << height - kMargin << "\" x2=\"" << width - kMargin
     << "\" y2=\"" << height - kMargin << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\""
     << height - kMargin << "\" stroke=\"black\"/>\n";
  os << "<text x=\"8\" y=\"" << kMargin << "\" font-size=\"11\">" << hi << "</text>\n";
  os << "<text x=\"8\" y=\"" << height - kMargin << "\" font-size=\"11\">" << lo << "</text>\n";
  int li = 0;
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\"";
    if (s.dashed) os << " stroke-dasharray=\"6 4\"";
    os << " points=\"";
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      os << kMargin + px * i << "," << height - kMargin - py * (s.y[i] - lo) << " ";
    }
    os << "\"/>\n";
    os << "<text x=\"" << width - kMargin + 4 << "\" y=\"" << kMargin + 16 * li << "\" fill=\""
       << s.color << "\" font-size=\"11\">" << s.label << "</text>\n";
    ++li;
  }
  os << "</svg>\n";
  return os.str();
}

std::string heatmap(const std::string& title, std::size_t rows, std::size_t cols,
                    const std::vector<double>& values, int width, int height) {
  double lo = 1e300, hi = -1e300;
  minmax(values, &lo, &hi);
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double cw = static_cast<double>(width - 2 * kMargin) / cols;
  const double ch = static_cast<double>(height - 2 * kMargin) / rows;
  std::ostringstream os;
  os << header(width, height, title);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double t = (values[r * cols + c] - lo) / (hi - lo);
      os << "<rect x=\"" << kMargin + c * cw << "\" y=\"" << kMargin + r * ch << "\" width=\""
         << cw + 0.5 << "\" height=\"" << ch + 0.5 << "\" fill=\"" << color_for(t) << "\"/>\n";
    }
  os << "</svg>\n";
  return os.str();
}

std::string scatter(const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<double>& x,
                    const std::vector<double>& y, int width, int height) {
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  minmax(x, &xlo, &xhi);
  minmax(y, &ylo, &yhi);
  if (xhi - xlo < 1e-12) xhi = xlo + 1.0;
  if (yhi - ylo < 1e-12) yhi = ylo + 1.0;
  std::ostringstream os;
  os << header(width, height, title);
  os << "<text x=\"" << width / 2 << "\" y=\"" << height - 8
     << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
  os << "<text x=\"14\" y=\"" << height / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 "
     << height / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    const double px = kMargin + (x[i] - xlo) / (xhi - xlo) * (width - 2 * kMargin);
    const double py = height - kMargin - (y[i] - ylo) / (yhi - ylo) * (height - 2 * kMargin);
    os << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"1.6\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace dclstm::svg
