#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cseg {

// Axis-aligned box in pixel-center coordinates: pixel (x, y) has its center at
// integer (x, y), so [0, 0, W-1, H-1] covers the whole image. The box covers
// the continuous extent [x0 - 0.5, x1 + 0.5) x [y0 - 0.5, y1 + 0.5).
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double extent_w() const { return x1 - x0 + 1.0; }
  double extent_h() const { return y1 - y0 + 1.0; }

  bool valid() const {
    return std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1) && x0 < x1 && y0 < y1;
  }

  // Pixels whose centers fall inside the extent, clipped to a W x H canvas.
  int first_col() const { return std::max(0, static_cast<int>(std::ceil(x0 - 0.5))); }
  int first_row() const { return std::max(0, static_cast<int>(std::ceil(y0 - 0.5))); }
  int end_col(int width) const { return std::min(width, static_cast<int>(std::ceil(x1 + 0.5))); }
  int end_row(int height) const { return std::min(height, static_cast<int>(std::ceil(y1 + 0.5))); }

  bool contains_pixel(int x, int y) const {
    return x >= x0 - 0.5 && x < x1 + 0.5 && y >= y0 - 0.5 && y < y1 + 0.5;
  }

  // Number of canvas pixels in the footprint.
  long footprint_area(int width, int height) const {
    long w = std::max(0, end_col(width) - first_col());
    long h = std::max(0, end_row(height) - first_row());
    return w * h;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

inline void require_valid_box(const Box& b, const char* what) {
  if (!b.valid())
    throw std::invalid_argument(std::string(what) + ": degenerate box [" + std::to_string(b.x0) + "," +
                                std::to_string(b.y0) + "," + std::to_string(b.x1) + "," + std::to_string(b.y1) + "]");
}

}  // namespace cseg
