#pragma once

// Annotation primitives (extreme points, scribbles, free polylines) and their
// rasterization into per-region binary maps and the shared two-channel
// positive/negative representation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cseg/box.hpp"
#include "cseg/ops.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

struct Point {
  int x = 0, y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct ExtremePoints {
  Point left, right, top, bottom;

  bool valid(int width, int height) const {
    auto inside = [&](Point p) { return p.x >= 0 && p.y >= 0 && p.x < width && p.y < height; };
    return left.x <= right.x && top.y <= bottom.y && inside(left) && inside(right) && inside(top) && inside(bottom);
  }
  std::array<Point, 4> points() const { return {left, right, top, bottom}; }
  friend bool operator==(const ExtremePoints&, const ExtremePoints&) = default;
};

// Corrective stroke through three ordered control points. region_id is 1-based.
struct Scribble {
  std::array<Point, 3> control_points;
  int region_id = 1;
  std::vector<Point> pixels;  // rasterized footprint, filled by make_scribble
};

class AnnotationMap {
 public:
  AnnotationMap() = default;
  AnnotationMap(int width, int height) : width_(width), height_(height), mask_(std::size_t(width) * height, 0) {
    if (width < 1 || height < 1) throw std::invalid_argument("AnnotationMap: empty dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool get(int x, int y) const { return mask_[std::size_t(y) * width_ + x] != 0; }
  void set(int x, int y) {
    if (in_bounds(x, y)) mask_[std::size_t(y) * width_ + x] = 1;
  }
  std::size_t count() const { return std::size_t(std::count(mask_.begin(), mask_.end(), std::uint8_t(1))); }
  bool any() const { return count() > 0; }
  const std::vector<std::uint8_t>& data() const { return mask_; }

  AnnotationMap& operator|=(const AnnotationMap& other) {
    if (other.width_ != width_ || other.height_ != height_) throw std::invalid_argument("AnnotationMap: size mismatch");
    for (std::size_t i = 0; i < mask_.size(); ++i) mask_[i] |= other.mask_[i];
    return *this;
  }
  void clear() { std::fill(mask_.begin(), mask_.end(), std::uint8_t(0)); }

  friend bool operator==(const AnnotationMap&, const AnnotationMap&) = default;

 private:
  int width_ = 0, height_ = 0;
  std::vector<std::uint8_t> mask_;
};

// F_i: the region's own annotations and the saturated union of everyone else's.
struct RegionAnnotationPair {
  AnnotationMap positive;
  AnnotationMap negative;
};

inline constexpr int kExtremePointDiscRadiusSq = 9;  // diameter 6 around the pixel center
inline constexpr int kScribbleHalfWidth = 1;         // 3x3 stamp

// Tight box around the extreme points, grown by margin_fraction of its extent
// per side and clamped to the image. Extents narrower than three pixels are
// widened to three pixels.
inline Box box_from_extreme_points(const ExtremePoints& ep, int width, int height, double margin_fraction = 0.0) {
  if (!ep.valid(width, height)) throw std::invalid_argument("box_from_extreme_points: invalid extreme points");
  auto axis = [margin_fraction](double lo, double hi, int size) {
    const double m = (hi - lo) * margin_fraction;
    lo = std::max(0.0, lo - m);
    hi = std::min(double(size - 1), hi + m);
    if (hi - lo < 2.0) {
      const double c = std::round((lo + hi) / 2);
      lo = c - 1;
      hi = c + 1;
      if (size >= 3) {
        if (lo < 0) lo = 0, hi = 2;
        if (hi > size - 1) hi = size - 1, lo = size - 3;
      }
    }
    return std::pair{lo, hi};
  };
  auto [x0, x1] = axis(ep.left.x, ep.right.x, width);
  auto [y0, y1] = axis(ep.top.y, ep.bottom.y, height);
  return Box{x0, y0, x1, y1};
}

inline void stamp_disc(AnnotationMap& map, Point c, int radius_sq = kExtremePointDiscRadiusSq) {
  const int r = static_cast<int>(std::floor(std::sqrt(double(radius_sq))));
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= radius_sq) map.set(c.x + dx, c.y + dy);
}

inline void stamp_square(AnnotationMap& map, Point c, int half = kScribbleHalfWidth) {
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) map.set(c.x + dx, c.y + dy);
}

inline AnnotationMap rasterize_extreme_points(const ExtremePoints& ep, int width, int height) {
  AnnotationMap map(width, height);
  for (Point p : ep.points()) stamp_disc(map, p);
  return map;
}

struct PointD {
  double x = 0, y = 0;
};

// Quadratic bezier that passes through all three points at t = 0, 1/2, 1.
// The middle control point is Q = 2*P1 - (P0 + P2)/2.
inline PointD interpolating_bezier(const std::array<Point, 3>& p, double t) {
  const double qx = 2.0 * p[1].x - 0.5 * (p[0].x + p[2].x);
  const double qy = 2.0 * p[1].y - 0.5 * (p[0].y + p[2].y);
  const double a = (1 - t) * (1 - t), b = 2 * t * (1 - t), c = t * t;
  return {a * p[0].x + b * qx + c * p[2].x, a * p[0].y + b * qy + c * p[2].y};
}

// Length of the bezier's control polygon; an upper bound on the curve length.
inline double bezier_control_length(const std::array<Point, 3>& p) {
  const double qx = 2.0 * p[1].x - 0.5 * (p[0].x + p[2].x);
  const double qy = 2.0 * p[1].y - 0.5 * (p[0].y + p[2].y);
  return std::hypot(qx - p[0].x, qy - p[0].y) + std::hypot(p[2].x - qx, p[2].y - qy);
}

inline Point round_point(PointD p) { return {int(std::lround(p.x)), int(std::lround(p.y))}; }

// Samples per unit of (upper-bounded) curve length when rasterizing strokes.
inline constexpr double kStrokeSamplesPerPixel = 8.0;

// Stamps a 3x3 square at every rounded sample of the curve.
inline AnnotationMap rasterize_bezier(const std::array<Point, 3>& ctrl, int width, int height,
                                      double samples_per_pixel = kStrokeSamplesPerPixel) {
  AnnotationMap map(width, height);
  const int n = std::max(1, int(std::ceil(samples_per_pixel * bezier_control_length(ctrl))));
  for (int i = 0; i <= n; ++i) stamp_square(map, round_point(interpolating_bezier(ctrl, double(i) / n)));
  return map;
}

inline AnnotationMap rasterize_scribble(const Scribble& s, int width, int height) {
  return rasterize_bezier(s.control_points, width, height);
}

// Free-hand stroke, stamped along each straight segment.
inline AnnotationMap rasterize_polyline(std::span<const Point> points, int width, int height) {
  if (points.empty()) throw std::invalid_argument("rasterize_polyline: empty stroke");
  AnnotationMap map(width, height);
  stamp_square(map, points[0]);
  for (std::size_t k = 1; k < points.size(); ++k) {
    const Point a = points[k - 1], b = points[k];
    const int n = std::max(1, int(std::ceil(kStrokeSamplesPerPixel * std::hypot(b.x - a.x, b.y - a.y))));
    for (int i = 1; i <= n; ++i) {
      const double t = double(i) / n;
      stamp_square(map, round_point({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)}));
    }
  }
  return map;
}

inline std::vector<Point> set_pixels(const AnnotationMap& map) {
  std::vector<Point> out;
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x)
      if (map.get(x, y)) out.push_back({x, y});
  return out;
}

inline Scribble make_scribble(const std::array<Point, 3>& ctrl, int region_id, int width, int height) {
  Scribble s{ctrl, region_id, {}};
  s.pixels = set_pixels(rasterize_scribble(s, width, height));
  return s;
}

// region_id is 1-based. Negative = OR over all other regions' maps.
inline RegionAnnotationPair build_region_annotation_pair(int region_id, std::span<const AnnotationMap> all) {
  if (all.empty()) throw std::invalid_argument("build_region_annotation_pair: empty annotation list");
  if (region_id < 1 || region_id > int(all.size()))
    throw std::invalid_argument("build_region_annotation_pair: region id out of range");
  RegionAnnotationPair pair{all[region_id - 1], AnnotationMap(all[0].width(), all[0].height())};
  for (int j = 0; j < int(all.size()); ++j)
    if (j != region_id - 1) pair.negative |= all[j];
  return pair;
}

template <class T>
Tensor<T> annotation_pair_tensor(const RegionAnnotationPair& pair) {
  const int w = pair.positive.width(), h = pair.positive.height();
  Tensor<T> t({h, w, 2});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      t.at(y, x, 0) = pair.positive.get(x, y) ? T(1) : T(0);
      t.at(y, x, 1) = pair.negative.get(x, y) ? T(1) : T(0);
    }
  return t;
}

// RoI-aligned crop of both annotation channels: [out_h, out_w, 2].
template <class T>
Tensor<T> crop_annotation_map(const RegionAnnotationPair& pair, const Box& box, int out_h, int out_w) {
  return ops::bilinear_crop(annotation_pair_tensor<T>(pair), box, out_h, out_w, 1.0);
}

// Everything the annotator has provided for one image, per region.
struct AnnotationState {
  int width = 0, height = 0;
  std::vector<ExtremePoints> extreme_points;          // one per region
  std::vector<Scribble> scribbles;                    // simulated, 3-point
  std::vector<std::vector<Point>> polylines;          // human, drawn as-is
  std::vector<int> polyline_regions;                  // 1-based, parallel to polylines
  double box_margin = 0.0;                            // fraction added to each box side

  int regions() const { return int(extreme_points.size()); }
  std::size_t scribble_count() const { return scribbles.size() + polylines.size(); }

  // S_1..S_N.
  std::vector<AnnotationMap> region_maps() const {
    std::vector<AnnotationMap> maps;
    maps.reserve(extreme_points.size());
    for (const auto& ep : extreme_points) maps.push_back(rasterize_extreme_points(ep, width, height));
    for (const auto& s : scribbles) {
      if (s.region_id < 1 || s.region_id > regions()) throw std::invalid_argument("scribble region id out of range");
      auto& m = maps[s.region_id - 1];
      if (s.pixels.empty())
        m |= rasterize_scribble(s, width, height);
      else
        for (Point p : s.pixels) m.set(p.x, p.y);
    }
    for (std::size_t k = 0; k < polylines.size(); ++k) {
      const int r = polyline_regions.at(k);
      if (r < 1 || r > regions()) throw std::invalid_argument("polyline region id out of range");
      maps[r - 1] |= rasterize_polyline(polylines[k], width, height);
    }
    return maps;
  }

  std::vector<Box> boxes() const { return boxes(box_margin); }
  std::vector<Box> boxes(double margin_fraction) const {
    std::vector<Box> out;
    for (const auto& ep : extreme_points) out.push_back(box_from_extreme_points(ep, width, height, margin_fraction));
    return out;
  }
};

}  // namespace cseg
