#pragma once

#include <string>
#include <vector>

namespace dclstm::svg {

struct Series {
  std::string label;
  std::vector<double> y;  // x is the index
  std::string color = "#1f77b4";
  bool dashed = false;
};

std::string line_chart(const std::string& title, const std::vector<Series>& series,
                       int width = 900, int height = 360);

// rows x cols grid, row 0 drawn at the top
std::string heatmap(const std::string& title, std::size_t rows, std::size_t cols,
                    const std::vector<double>& values, int width = 900, int height = 480);

std::string scatter(const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<double>& x,
                    const std::vector<double>& y, int width = 640, int height = 480);

}  // namespace dclstm::svg
