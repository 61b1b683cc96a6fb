#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace cseg {

// Per-pixel region index in 1..N, row-major. Used both for ground truth and
// for predictions.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int width, int height, int fill = 1) : width_(width), height_(height), labels_(std::size_t(width) * height, fill) {
    if (width < 1 || height < 1) throw std::invalid_argument("LabelMap: empty dimensions");
  }
  LabelMap(int width, int height, std::vector<int> labels) : width_(width), height_(height), labels_(std::move(labels)) {
    if (labels_.size() != std::size_t(width) * height) throw std::invalid_argument("LabelMap: size mismatch");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return labels_.size(); }
  int at(int x, int y) const { return labels_[std::size_t(y) * width_ + x]; }
  int& at(int x, int y) { return labels_[std::size_t(y) * width_ + x]; }
  int operator[](std::size_t i) const { return labels_[i]; }
  int& operator[](std::size_t i) { return labels_[i]; }
  const std::vector<int>& values() const { return labels_; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  int max_label() const { return labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end()); }

  std::size_t count(int label) const { return std::size_t(std::count(labels_.begin(), labels_.end(), label)); }

  // True when every pixel carries a label in 1..N and each of 1..N occurs.
  bool is_partition(int n) const {
    std::vector<char> seen(std::size_t(n) + 1, 0);
    for (int l : labels_) {
      if (l < 1 || l > n) return false;
      seen[l] = 1;
    }
    return std::all_of(seen.begin() + 1, seen.end(), [](char c) { return c != 0; });
  }

  bool same_size(const LabelMap& o) const { return width_ == o.width_ && height_ == o.height_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int width_ = 0, height_ = 0;
  std::vector<int> labels_;
};

using RegionLabelMap = LabelMap;
using Segmentation = LabelMap;

// Number of regions in a ground-truth map; throws unless labels are exactly 1..N.
inline int region_count(const RegionLabelMap& y) {
  const int n = y.max_label();
  if (n < 1 || !y.is_partition(n)) throw std::invalid_argument("label map is not a partition into regions 1..N");
  return n;
}

}  // namespace cseg
