#pragma once

// Synthetic Voronoi scenes: every pixel belongs to the cell of its nearest
// site after a smooth displacement, each cell gets a base color plus value
// noise. Scenes are a pure function of (seed, index).

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cseg/labels.hpp"
#include "cseg/png.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

struct SyntheticScene {
  Tensor<float> image;  // [H, W, 3], values on the 8-bit grid
  RegionLabelMap labels;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;

  int regions() const { return labels.max_label(); }
};

struct SceneStyle {
  int min_regions = 2;
  int max_regions = 8;
  int min_region_pixels = 25;
  double distortion = 0.06;          // boundary displacement amplitude, fraction of size
  double min_color_distance = 0.10;  // between base colors in RGB
  double texture = 0.12;             // smooth per-channel value noise amplitude
  double grain = 0.03;               // per-pixel uniform noise amplitude
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 1));
}

// Lattice of uniform values in [-1, 1] with smoothstep bilinear interpolation.
class ValueNoise {
 public:
  ValueNoise(int width, int height, double cell, std::mt19937_64& rng) : cell_(cell) {
    gw_ = int(std::ceil(width / cell)) + 2;
    gh_ = int(std::ceil(height / cell)) + 2;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    v_.resize(std::size_t(gw_) * gh_);
    for (auto& x : v_) x = u(rng);
  }

  double at(double x, double y) const {
    const double gx = std::clamp(x / cell_, 0.0, double(gw_ - 1)), gy = std::clamp(y / cell_, 0.0, double(gh_ - 1));
    const int x0 = std::min(int(gx), gw_ - 2), y0 = std::min(int(gy), gh_ - 2);
    const double tx = smooth(gx - x0), ty = smooth(gy - y0);
    auto g = [&](int i, int j) { return v_[std::size_t(j) * gw_ + i]; };
    const double top = g(x0, y0) * (1 - tx) + g(x0 + 1, y0) * tx;
    const double bot = g(x0, y0 + 1) * (1 - tx) + g(x0 + 1, y0 + 1) * tx;
    return top * (1 - ty) + bot * ty;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  double cell_;
  int gw_ = 0, gh_ = 0;
  std::vector<double> v_;
};

struct Site {
  double x = 0, y = 0;
};

// Nearest-site partition; pixel (x, y) is looked up at (x + dx, y + dy).
// Ties go to the lower site index.
template <class Displace>
RegionLabelMap voronoi_partition(std::span<const Site> sites, int width, int height, Displace displace) {
  if (sites.empty()) throw std::invalid_argument("voronoi_partition: no sites");
  RegionLabelMap y(width, height);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const auto [dx, dy] = displace(c, r);
      const double px = c + dx, py = r + dy;
      int best = 0;
      double bd = 0;
      for (std::size_t i = 0; i < sites.size(); ++i) {
        const double d = (px - sites[i].x) * (px - sites[i].x) + (py - sites[i].y) * (py - sites[i].y);
        if (i == 0 || d < bd) bd = d, best = int(i);
      }
      y.at(c, r) = best + 1;
    }
  return y;
}

inline RegionLabelMap voronoi_partition(std::span<const Site> sites, int width, int height) {
  return voronoi_partition(sites, width, height, [](int, int) { return std::pair<double, double>{0.0, 0.0}; });
}

inline bool valid_scene_partition(const RegionLabelMap& y, int n, int min_pixels) {
  std::vector<long> count(std::size_t(n) + 1, 0);
  for (std::size_t p = 0; p < y.size(); ++p) ++count[y[p]];
  for (int i = 1; i <= n; ++i)
    if (count[i] < min_pixels) return false;
  return true;
}

inline void check_scene_size(int size) {
  if (size != 32 && size != 64 && size != 128) throw std::invalid_argument("scene size must be 32, 64 or 128");
}

inline SyntheticScene generate_scene(int size, std::uint64_t seed, std::uint64_t index, const SceneStyle& style = {}) {
  check_scene_size(size);
  SyntheticScene s;
  s.seed = seed;
  s.index = index;
  std::mt19937_64 rng(scene_seed(seed, index));
  std::uniform_int_distribution<int> un(style.min_regions, style.max_regions);
  std::uniform_real_distribution<double> upos(0.0, double(size));
  int n = 0;
  for (;;) {
    n = un(rng);
    std::vector<Site> sites(n);
    for (auto& st : sites) st = {upos(rng), upos(rng)};
    const ValueNoise nx(size, size, size / 4.0, rng), ny(size, size, size / 4.0, rng);
    const double amp = style.distortion * size;
    s.labels = voronoi_partition(sites, size, size, [&](int c, int r) {
      return std::pair<double, double>{amp * nx.at(c, r), amp * ny.at(c, r)};
    });
    if (valid_scene_partition(s.labels, n, style.min_region_pixels)) break;
  }
  std::uniform_real_distribution<double> ucol(0.1, 0.9);
  std::vector<std::array<double, 3>> colors;
  for (int tries = 0; int(colors.size()) < n; ++tries) {
    const std::array<double, 3> c{ucol(rng), ucol(rng), ucol(rng)};
    bool ok = true;
    for (const auto& o : colors) {
      const double d = std::hypot(c[0] - o[0], c[1] - o[1], c[2] - o[2]);
      if (d < style.min_color_distance) ok = false;
    }
    if (ok || tries > 1000) colors.push_back(c);
  }
  std::vector<ValueNoise> tex;
  for (int ch = 0; ch < 3; ++ch) tex.emplace_back(size, size, size / 8.0, rng);
  std::uniform_real_distribution<double> ugrain(-style.grain, style.grain);
  s.image = Tensor<float>({size, size, 3});
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const double v = colors[s.labels.at(c, r) - 1][ch] + style.texture * tex[ch].at(c, r) + ugrain(rng);
        s.image.at(r, c, ch) = float(to_byte(float(v))) / 255.0f;
      }
  return s;
}

// Scenes first_index .. first_index + count - 1 of the given seed.
inline std::vector<SyntheticScene> generate_synthetic_dataset(int count, int size, std::uint64_t seed,
                                                              std::uint64_t first_index = 0,
                                                              const SceneStyle& style = {}) {
  if (count < 1) throw std::invalid_argument("generate_synthetic_dataset: count must be >= 1");
  check_scene_size(size);
  std::vector<SyntheticScene> out;
  out.reserve(std::size_t(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_scene(size, seed, first_index + std::uint64_t(i), style));
  return out;
}

// <dir>/image.png (8-bit RGB), <dir>/labels.png (16-bit indices), <dir>/meta.json.
inline void save_scene(const SyntheticScene& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "image.png", encode_png_rgb8(s.image));
  write_file(dir / "labels.png", encode_png_gray16(s.labels));
  nlohmann::ordered_json meta{{"seed", s.seed},
                              {"index", s.index},
                              {"regions", s.regions()},
                              {"width", s.labels.width()},
                              {"height", s.labels.height()}};
  write_file(dir / "meta.json", meta.dump(2) + "\n");
}

inline SyntheticScene load_scene(const std::filesystem::path& dir) {
  SyntheticScene s;
  s.image = decode_png_rgb8(read_file(dir / "image.png"));
  s.labels = decode_png_gray16(read_file(dir / "labels.png"));
  const auto bytes = read_file(dir / "meta.json");
  const auto meta = nlohmann::json::parse(bytes.begin(), bytes.end());
  s.seed = meta.at("seed").get<std::uint64_t>();
  s.index = meta.at("index").get<std::uint64_t>();
  if (s.image.dim(0) != s.labels.height() || s.image.dim(1) != s.labels.width())
    throw std::runtime_error("load_scene: image/labels size mismatch in " + dir.string());
  if (meta.at("regions").get<int>() != region_count(s.labels))
    throw std::runtime_error("load_scene: region count mismatch in " + dir.string());
  return s;
}

inline std::string scene_dir_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05llu", static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace cseg
