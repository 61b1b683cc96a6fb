#pragma once

// Simulated annotator: extreme points from ground truth, error regions of a
// prediction, corrective scribbles and the per-round scribble allocation.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "cseg/annotation.hpp"
#include "cseg/labels.hpp"
#include "cseg/model.hpp"

namespace cseg {

using Rng = std::mt19937_64;

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline AnnotationMap region_mask(const RegionLabelMap& y, int region_id) {
  AnnotationMap m(y.width(), y.height());
  for (int r = 0; r < y.height(); ++r)
    for (int c = 0; c < y.width(); ++c)
      if (y.at(c, r) == region_id) m.set(c, r);
  return m;
}

namespace detail {

inline bool on_mask_boundary(const AnnotationMap& m, int x, int y) {
  constexpr int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
  for (int k = 0; k < 4; ++k) {
    const int nx = x + dx[k], ny = y + dy[k];
    if (!m.in_bounds(nx, ny) || !m.get(nx, ny)) return true;
  }
  return false;
}

// Boundary pixels within Chebyshev distance `jitter` of p, in raster order.
inline Point jitter_along_boundary(const AnnotationMap& m, Point p, int jitter, Rng& rng) {
  if (jitter <= 0) return p;
  std::vector<Point> cand;
  for (int y = p.y - jitter; y <= p.y + jitter; ++y)
    for (int x = p.x - jitter; x <= p.x + jitter; ++x)
      if (m.in_bounds(x, y) && m.get(x, y) && on_mask_boundary(m, x, y)) cand.push_back({x, y});
  return cand.empty() ? p : cand[uniform_index(rng, cand.size())];
}

}  // namespace detail

// Left/right/top/bottom-most mask pixels; ties go to the smallest other
// coordinate. With jitter > 0 each point moves to a random boundary pixel at
// most `jitter` away.
inline ExtremePoints simulate_extreme_points(const AnnotationMap& mask, int jitter, Rng& rng) {
  std::optional<ExtremePoints> ep;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.get(x, y)) continue;
      const Point p{x, y};
      if (!ep) {
        ep = ExtremePoints{p, p, p, p};
        continue;
      }
      if (x < ep->left.x) ep->left = p;
      if (x > ep->right.x) ep->right = p;
      if (y > ep->bottom.y) ep->bottom = p;
      // top is the first pixel in raster order and never changes
    }
  if (!ep) throw std::invalid_argument("simulate_extreme_points: empty mask");
  if (jitter > 0) {
    ep->left = detail::jitter_along_boundary(mask, ep->left, jitter, rng);
    ep->right = detail::jitter_along_boundary(mask, ep->right, jitter, rng);
    ep->top = detail::jitter_along_boundary(mask, ep->top, jitter, rng);
    ep->bottom = detail::jitter_along_boundary(mask, ep->bottom, jitter, rng);
  }
  return *ep;
}

// Extreme points of every region of y, in region order.
inline AnnotationState initial_annotations(const RegionLabelMap& y, int jitter, Rng& rng) {
  AnnotationState st;
  st.width = y.width();
  st.height = y.height();
  const int n = region_count(y);
  for (int i = 1; i <= n; ++i) st.extreme_points.push_back(simulate_extreme_points(region_mask(y, i), jitter, rng));
  return st;
}

struct ErrorRegion {
  int gt_region_id = 0;
  std::vector<Point> pixels;  // 4-connected, raster order of discovery
  double importance = 0;
};

// Per-region intersection/prediction/ground-truth counts; mean IoU from
// counts is bitwise equal to mean_region_iou on the same labels.
struct IoUCounts {
  int regions = 0;
  std::vector<long> inter, pred, gt;

  IoUCounts(const Segmentation& p, const RegionLabelMap& y) {
    if (!p.same_size(y)) throw std::invalid_argument("IoUCounts: dimension mismatch");
    regions = region_count(y);
    const int m = std::max(regions, p.max_label());
    inter.assign(m + 1, 0);
    pred.assign(m + 1, 0);
    gt.assign(m + 1, 0);
    for (std::size_t k = 0; k < y.size(); ++k) {
      const int a = p[k], b = y[k];
      if (a >= 1 && a <= m) ++pred[a];
      ++gt[b];
      if (a == b) ++inter[b];
    }
  }

  double mean() const {
    double s = 0;
    for (int i = 1; i <= regions; ++i) s += double(inter[i]) / double(pred[i] + gt[i] - inter[i]);
    return s / regions;
  }
};

// Mean-IoU gain from relabelling err.pixels to err.gt_region_id.
inline double error_importance(const ErrorRegion& err, const Segmentation& pred, const RegionLabelMap& y) {
  if (err.pixels.empty()) return 0.0;
  IoUCounts c(pred, y);
  const double before = c.mean();
  const int g = err.gt_region_id;
  for (Point p : err.pixels) {
    const int a = pred.at(p.x, p.y);
    if (a == g) throw std::invalid_argument("error_importance: pixel already correct");
    if (y.at(p.x, p.y) != g) throw std::invalid_argument("error_importance: pixel outside its ground-truth region");
    if (a >= 1 && a < int(c.pred.size())) --c.pred[a];
    ++c.pred[g];
    ++c.inter[g];
  }
  return c.mean() - before;
}

// 4-connected components of {Y = i, pred != i} for every region i, sorted by
// descending importance. Equal importance keeps discovery (raster) order.
inline std::vector<ErrorRegion> extract_error_regions(const Segmentation& pred, const RegionLabelMap& y) {
  if (!pred.same_size(y)) throw std::invalid_argument("extract_error_regions: dimension mismatch");
  const int w = y.width(), h = y.height();
  std::vector<char> seen(y.size(), 0);
  std::vector<ErrorRegion> out;
  std::vector<Point> stack;
  constexpr int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
  auto wrong = [&](int x, int yy) { return pred.at(x, yy) != y.at(x, yy); };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t k = std::size_t(r) * w + c;
      if (seen[k] || !wrong(c, r)) continue;
      ErrorRegion e;
      e.gt_region_id = y.at(c, r);
      seen[k] = 1;
      stack.assign(1, {c, r});
      while (!stack.empty()) {
        const Point p = stack.back();
        stack.pop_back();
        e.pixels.push_back(p);
        for (int d = 0; d < 4; ++d) {
          const int nx = p.x + dx[d], ny = p.y + dy[d];
          if (!y.in_bounds(nx, ny)) continue;
          const std::size_t nk = std::size_t(ny) * w + nx;
          if (seen[nk] || y.at(nx, ny) != e.gt_region_id || !wrong(nx, ny)) continue;
          seen[nk] = 1;
          stack.push_back({nx, ny});
        }
      }
      std::sort(e.pixels.begin(), e.pixels.end(), [](Point a, Point b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
      out.push_back(std::move(e));
    }
  for (auto& e : out) e.importance = error_importance(e, pred, y);
  std::stable_sort(out.begin(), out.end(), [](const ErrorRegion& a, const ErrorRegion& b) {
    return a.importance > b.importance;
  });
  return out;
}

inline constexpr int kScribbleAttempts = 10;

namespace detail {

// Candidate first control points, from the most to the least specific rule:
// error pixels next to a correctly predicted pixel of the same region, then
// next to any pixel of the same region, then on the error boundary.
inline std::vector<Point> scribble_start_candidates(const ErrorRegion& err, const Segmentation& pred,
                                                    const RegionLabelMap& y) {
  const int g = err.gt_region_id;
  std::vector<char> in_err(y.size(), 0);
  for (Point p : err.pixels) in_err[std::size_t(p.y) * y.width() + p.x] = 1;
  constexpr int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
  std::vector<Point> tiers[3];
  for (Point p : err.pixels) {
    bool correct = false, same = false, edge = false;
    for (int d = 0; d < 4; ++d) {
      const int nx = p.x + dx[d], ny = p.y + dy[d];
      if (!y.in_bounds(nx, ny)) {
        edge = true;
        continue;
      }
      if (!in_err[std::size_t(ny) * y.width() + nx]) edge = true;
      if (y.at(nx, ny) == g) same = true;
      if (y.at(nx, ny) == g && pred.at(nx, ny) == g) correct = true;
    }
    if (correct) tiers[0].push_back(p);
    if (same) tiers[1].push_back(p);
    if (edge) tiers[2].push_back(p);
  }
  for (auto& t : tiers)
    if (!t.empty()) return t;
  return err.pixels;
}

}  // namespace detail

inline bool scribble_inside_region(const Scribble& s, const RegionLabelMap& y) {
  for (Point p : s.pixels)
    if (!y.in_bounds(p.x, p.y) || y.at(p.x, p.y) != s.region_id) return false;
  return true;
}

// Up to kScribbleAttempts random three-point strokes; the valid one covering
// the most pixels wins (first on ties). nullopt if none stays inside Y.
inline std::optional<Scribble> simulate_scribble(const ErrorRegion& err, const Segmentation& pred,
                                                 const RegionLabelMap& y, Rng& rng) {
  if (err.pixels.empty()) throw std::invalid_argument("simulate_scribble: empty error region");
  const auto starts = detail::scribble_start_candidates(err, pred, y);
  std::optional<Scribble> best;
  for (int a = 0; a < kScribbleAttempts; ++a) {
    const Point p0 = starts[uniform_index(rng, starts.size())];
    const Point p1 = err.pixels[uniform_index(rng, err.pixels.size())];
    const Point p2 = err.pixels[uniform_index(rng, err.pixels.size())];
    Scribble s = make_scribble({p0, p1, p2}, err.gt_region_id, y.width(), y.height());
    if (!scribble_inside_region(s, y)) continue;
    if (!best || s.pixels.size() > best->pixels.size()) best = std::move(s);
  }
  return best;
}

struct AllocationStrategy {
  enum class Mode { fixed_one_per_region, free_budget };
  Mode mode = Mode::fixed_one_per_region;
  int budget_per_round = 0;  // free mode only; 0 means one per region (N)

  int budget(int regions) const {
    if (budget_per_round < 0) throw std::invalid_argument("AllocationStrategy: negative budget");
    return budget_per_round == 0 ? regions : budget_per_round;
  }
};

// Fixed mode: one scribble per region on its most important error region.
// Free mode: one scribble on each of the globally most important error
// regions until the budget is spent. When a stroke cannot be placed inside
// the ground truth, the next error region in line takes its place.
inline std::vector<Scribble> allocate_scribbles(const Segmentation& pred, const RegionLabelMap& y,
                                                const AllocationStrategy& strategy, Rng& rng) {
  const int n = region_count(y);
  const auto errors = extract_error_regions(pred, y);
  std::vector<Scribble> out;
  if (strategy.mode == AllocationStrategy::Mode::fixed_one_per_region) {
    for (int i = 1; i <= n; ++i)
      for (const auto& e : errors) {
        if (e.gt_region_id != i) continue;
        if (auto s = simulate_scribble(e, pred, y, rng)) {
          out.push_back(std::move(*s));
          break;
        }
      }
    return out;
  }
  const std::size_t budget = std::size_t(strategy.budget(n));
  for (const auto& e : errors) {
    if (out.size() >= budget) break;
    if (auto s = simulate_scribble(e, pred, y, rng)) out.push_back(std::move(*s));
  }
  return out;
}

struct RoundResult {
  std::vector<Scribble> scribbles;
  Segmentation segmentation;
  double mean_iou = 0;
};

// One annotator/machine iteration. `state` gains the new scribbles.
template <class T>
RoundResult interactive_round(const Tensor<float>& image, AnnotationState& state, const Segmentation& current,
                                 const ModelParams<T>& params, const RegionLabelMap& y,
                                 const AllocationStrategy& strategy, Rng& rng, Sharing sharing = Sharing::shared) {
  RoundResult r;
  r.scribbles = allocate_scribbles(current, y, strategy, rng);
  if (r.scribbles.empty()) {
    r.segmentation = current;
  } else {
    state.scribbles.insert(state.scribbles.end(), r.scribbles.begin(), r.scribbles.end());
    r.segmentation = predict_segmentation(image, state, params, sharing).labels;
  }
  r.mean_iou = mean_region_iou(r.segmentation, y).mean;
  return r;
}

}  // namespace cseg
