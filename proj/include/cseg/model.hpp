#pragma once

// Region-competition segmentation model.
//
//   image -> backbone (once per image) -> features Z
//   per region i: RoI crop of Z under b_i ++ RoI crop of F_i -> head -> mask logits l_i
//   paste every l_i into its box on a shared canvas (fill -1e4) -> softmax over regions
//
// Training uses either the pixel-wise weighted cross-entropy over the canvas
// or independent per-mask sigmoid BCE.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cseg/annotation.hpp"
#include "cseg/autodiff.hpp"
#include "cseg/box.hpp"
#include "cseg/labels.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

inline constexpr double kCanvasFill = -10000.0;
inline constexpr double kProbabilityClamp = 1e-12;

struct ModelConfig {
  int channels = 16;        // C
  int reduction = 4;        // r, power of two
  int backbone_layers = 4;
  int head_layers = 4;
  int kernel_size = 3;
  int roi_h = 17, roi_w = 17;    // h, w
  int mask_h = 33, mask_w = 33;  // h', w'

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("ModelConfig: " + m); };
    if (channels < 1) fail("channels must be >= 1");
    if (reduction < 1 || (reduction & (reduction - 1)) != 0) fail("reduction must be a power of two");
    if ((1 << stride_layers()) != reduction) fail("reduction needs more backbone layers");
    if (backbone_layers < 1 || head_layers < 1) fail("need at least one backbone and one head layer");
    if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel size must be odd");
    if (roi_h < 2 || roi_w < 2 || mask_h < 2 || mask_w < 2) fail("RoI and mask sizes must be >= 2");
  }
  int stride_layers() const {
    int s = 0;
    while ((1 << s) < reduction) ++s;
    return s;
  }
  int backbone_stride(int layer) const { return layer < stride_layers() ? 2 : 1; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class LossMode { pixelwise, maskwise };
enum class Sharing { shared, unshared };

// Trainable tensors, flat: backbone (kernel, bias) pairs followed by head pairs.
template <class T>
struct ModelParams {
  ModelConfig config;
  std::vector<Tensor<T>> tensors;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    std::mt19937_64 rng(seed);
    const int k = cfg.kernel_size;
    auto layer = [&](int cin, int cout) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (k * k * cin)));
      Tensor<T> kernel({k, k, cin, cout});
      for (auto& v : kernel.values()) v = T(dist(rng));
      p.tensors.push_back(std::move(kernel));
      p.tensors.push_back(Tensor<T>({cout}));
    };
    int cin = 3;
    for (int i = 0; i < cfg.backbone_layers; ++i, cin = cfg.channels) layer(cin, cfg.channels);
    cin = cfg.channels + 2;
    for (int i = 0; i < cfg.head_layers; ++i) {
      const int cout = i + 1 == cfg.head_layers ? 1 : cfg.channels;
      layer(cin, cout);
      cin = cout;
    }
    return p;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.all_finite()) return false;
    return true;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Graph handles for the parameter tensors, in ModelParams order.
struct ParamVars {
  std::vector<Var> all;
  int backbone_layers = 0;
  Var backbone_kernel(int i) const { return all[2 * i]; }
  Var backbone_bias(int i) const { return all[2 * i + 1]; }
  Var head_kernel(int i) const { return all[2 * (backbone_layers + i)]; }
  Var head_bias(int i) const { return all[2 * (backbone_layers + i) + 1]; }
};

template <class T>
ParamVars bind_params(Graph<T>& g, const ModelParams<T>& p, bool requires_grad) {
  ParamVars pv;
  pv.backbone_layers = p.config.backbone_layers;
  for (const auto& t : p.tensors) pv.all.push_back(g.leaf(t, requires_grad));
  return pv;
}

inline ParamVars param_vars(std::span<const Var> vars, const ModelConfig& cfg) {
  if (vars.size() != std::size_t(2 * (cfg.backbone_layers + cfg.head_layers)))
    throw std::invalid_argument("param_vars: tensor count does not match config");
  return ParamVars{std::vector<Var>(vars.begin(), vars.end()), cfg.backbone_layers};
}

// Counts backbone evaluations process-wide.
inline std::atomic<std::uint64_t>& backbone_call_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

template <class T>
Tensor<T> image_to_tensor(const Tensor<float>& image) {
  require_rank(image, 3, "image");
  if (image.dim(2) != 3) throw std::invalid_argument("image must have 3 channels");
  return image.template cast<T>();
}

// Z = backbone(X): [H/r, W/r, C].
template <class T>
Var backbone_forward(Graph<T>& g, const ParamVars& pv, Var image, const ModelConfig& cfg) {
  const auto& x = g.value(image);
  if (x.dim(0) % cfg.reduction != 0 || x.dim(1) % cfg.reduction != 0)
    throw std::invalid_argument("backbone_forward: image size " + shape_string(x.shape()) +
                                " not divisible by reduction " + std::to_string(cfg.reduction));
  backbone_call_counter().fetch_add(1, std::memory_order_relaxed);
  Var h = image;
  for (int i = 0; i < cfg.backbone_layers; ++i)
    h = ad::relu(g, ad::conv2d(g, h, pv.backbone_kernel(i), pv.backbone_bias(i), cfg.backbone_stride(i)));
  return h;
}

// l_i: [h', w', 1] mask logits for one region.
template <class T>
Var region_head_forward(Graph<T>& g, const ParamVars& pv, Var features, const Box& box,
                        const RegionAnnotationPair& pair, const ModelConfig& cfg) {
  require_valid_box(box, "region_head_forward");
  Var roi = ad::bilinear_crop(g, features, box, cfg.roi_h, cfg.roi_w, 1.0 / cfg.reduction);
  Var ann = g.leaf(crop_annotation_map<T>(pair, box, cfg.roi_h, cfg.roi_w), false);
  Var h = ad::concat_channels(g, roi, ann);
  for (int i = 0; i < cfg.head_layers; ++i) {
    h = ad::conv2d(g, h, pv.head_kernel(i), pv.head_bias(i), 1);
    if (i + 1 < cfg.head_layers) h = ad::relu(g, h);
  }
  return ad::resize(g, h, cfg.mask_h, cfg.mask_w);
}

// L: [H, W, N]; every l_i pasted under its box, -1e4 elsewhere.
template <class T>
Var project_to_canvas(Graph<T>& g, std::span<const Var> logit_maps, std::span<const Box> boxes, int width,
                      int height) {
  if (logit_maps.size() != boxes.size())
    throw std::invalid_argument("project_to_canvas: " + std::to_string(logit_maps.size()) + " maps but " +
                                std::to_string(boxes.size()) + " boxes");
  if (logit_maps.empty()) throw std::invalid_argument("project_to_canvas: no regions");
  std::vector<Var> pasted;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    pasted.push_back(ad::bilinear_paste(g, logit_maps[i], boxes[i], height, width, T(kCanvasFill)));
  return ad::stack_channels<T>(g, pasted);
}

// Plain-tensor variant of project_to_canvas.
template <class T>
Tensor<T> project_to_canvas(std::span<const Tensor<T>> logit_maps, std::span<const Box> boxes, int width, int height) {
  Graph<T> g;
  std::vector<Var> vars;
  for (const auto& m : logit_maps) vars.push_back(g.leaf(m, false));
  return g.value(project_to_canvas(g, std::span<const Var>(vars), boxes, width, height));
}

template <class T>
Tensor<T> canvas_probabilities(const Tensor<T>& logits) {
  return ops::channel_softmax(logits);
}

struct WeightMap {
  int width = 0, height = 0;
  std::vector<double> values;
  double at(int x, int y) const { return values[std::size_t(y) * width + x]; }
};

// weight(p) = 1 / footprint area of the smallest box containing p;
// 1/(W*H) where no box covers p.
inline WeightMap pixel_weights(std::span<const Box> boxes, int width, int height) {
  WeightMap wm{width, height, std::vector<double>(std::size_t(width) * height, 0.0)};
  std::vector<long> best(wm.values.size(), long(width) * height);
  for (const auto& b : boxes) {
    const long area = b.footprint_area(width, height);
    if (area <= 0) continue;
    for (int y = b.first_row(); y < b.end_row(height); ++y)
      for (int x = b.first_col(); x < b.end_col(width); ++x) {
        auto& a = best[std::size_t(y) * width + x];
        a = std::min(a, area);
      }
  }
  for (std::size_t i = 0; i < best.size(); ++i) wm.values[i] = 1.0 / double(best[i]);
  return wm;
}

struct LossStats {
  std::size_t clamped_pixels = 0;
};

// sum_p w(p) * -log P[p, Y(p)]; log argument clamped at 1e-12.
template <class T>
double pixelwise_loss(const Tensor<T>& probs, const RegionLabelMap& y, const WeightMap& weights,
                      LossStats* stats = nullptr) {
  require_rank(probs, 3, "pixelwise_loss probs");
  if (probs.dim(0) != y.height() || probs.dim(1) != y.width() || weights.width != y.width() ||
      weights.height != y.height())
    throw std::invalid_argument("pixelwise_loss: dimension mismatch");
  const int n = probs.dim(2);
  if (y.max_label() > n) throw std::invalid_argument("pixelwise_loss: label exceeds region count");
  double loss = 0;
  for (std::size_t p = 0; p < y.size(); ++p) {
    const double pv = probs[p * n + (y[p] - 1)];
    if (pv < kProbabilityClamp && stats) ++stats->clamped_pixels;
    loss += weights.values[p] * -std::log(std::max(pv, kProbabilityClamp));
  }
  return loss;
}

// Binary target of region `region` (1-based) resampled onto the mask grid of its box.
template <class T>
Tensor<T> maskwise_target(const RegionLabelMap& y, int region, const Box& box, int mask_h, int mask_w) {
  Tensor<T> indicator({y.height(), y.width(), 1});
  for (std::size_t p = 0; p < y.size(); ++p) indicator[p] = y[p] == region ? T(1) : T(0);
  auto crop = ops::bilinear_crop(indicator, box, mask_h, mask_w, 1.0);
  for (auto& v : crop.values()) v = v >= T(0.5) ? T(1) : T(0);
  return crop;
}

// Sum over regions of the mean per-mask sigmoid BCE.
template <class T>
double maskwise_bce_loss(std::span<const Tensor<T>> logit_maps, std::span<const Box> boxes, const RegionLabelMap& y) {
  if (logit_maps.size() != boxes.size()) throw std::invalid_argument("maskwise_bce_loss: count mismatch");
  double total = 0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& l = logit_maps[i];
    const auto t = maskwise_target<T>(y, int(i) + 1, boxes[i], l.dim(0), l.dim(1));
    double s = 0;
    for (std::size_t k = 0; k < l.size(); ++k) {
      const double v = l[k];
      s += std::max(v, 0.0) - v * t[k] + std::log1p(std::exp(-std::abs(v)));
    }
    total += s / double(l.size());
  }
  return total;
}

inline std::vector<RegionAnnotationPair> annotation_pairs(std::span<const AnnotationMap> maps, Sharing sharing) {
  std::vector<RegionAnnotationPair> pairs;
  for (int i = 1; i <= int(maps.size()); ++i) {
    auto pair = build_region_annotation_pair(i, maps);
    if (sharing == Sharing::unshared) pair.negative.clear();
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

template <class T>
struct ForwardPass {
  Var features;
  std::vector<Var> mask_logits;
  Var canvas;
  Var probs;
};

// Full forward path for one image. The backbone runs exactly once.
template <class T>
ForwardPass<T> forward(Graph<T>& g, const ParamVars& pv, const ModelConfig& cfg, const Tensor<T>& image,
                       std::span<const Box> boxes, std::span<const RegionAnnotationPair> pairs) {
  if (boxes.empty()) throw std::invalid_argument("forward: need at least one region");
  if (boxes.size() != pairs.size()) throw std::invalid_argument("forward: box/annotation count mismatch");
  ForwardPass<T> f;
  Var img = g.leaf(image, false);
  f.features = backbone_forward(g, pv, img, cfg);
  for (std::size_t i = 0; i < boxes.size(); ++i)
    f.mask_logits.push_back(region_head_forward(g, pv, f.features, boxes[i], pairs[i], cfg));
  f.canvas = project_to_canvas(g, std::span<const Var>(f.mask_logits), boxes, image.dim(1), image.dim(0));
  f.probs = ad::channel_softmax(g, f.canvas);
  return f;
}

// Training objective of one example as a graph node. The pixel-wise loss is
// divided by N so that images with different region counts weigh alike.
template <class T>
Var example_loss(Graph<T>& g, const ForwardPass<T>& f, std::span<const Box> boxes, const RegionLabelMap& y,
                 LossMode mode, const ModelConfig& cfg, LossStats* stats = nullptr) {
  const int n = int(boxes.size());
  if (y.max_label() > n) throw std::invalid_argument("example_loss: labels exceed region count");
  if (mode == LossMode::pixelwise) {
    const auto wm = pixel_weights(boxes, y.width(), y.height());
    std::vector<int> labels(y.size());
    std::vector<T> weights(y.size());
    for (std::size_t p = 0; p < y.size(); ++p) {
      labels[p] = y[p] - 1;
      weights[p] = T(wm.values[p]);
    }
    return ad::weighted_nll<T>(g, f.probs, labels, weights, T(1) / T(n), stats ? &stats->clamped_pixels : nullptr,
                               kProbabilityClamp);
  }
  std::vector<Var> terms;
  for (int i = 0; i < n; ++i)
    terms.push_back(
        ad::sigmoid_bce_mean(g, f.mask_logits[i], maskwise_target<T>(y, i + 1, boxes[i], cfg.mask_h, cfg.mask_w)));
  return ad::add_n<T>(g, terms);
}

struct TrainingExample {
  Tensor<float> image;  // [H, W, 3] in [0, 1]
  RegionLabelMap labels;
  AnnotationState annotations;
};

template <class T>
struct SgdMomentum {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double clip_norm = 0.0;  // 0 disables global gradient-norm clipping
  std::vector<Tensor<T>> velocity;

  void step(ModelParams<T>& params, const std::vector<Tensor<T>>& grads) {
    if (velocity.empty())
      for (const auto& t : params.tensors) velocity.emplace_back(t.shape());
    double scale = 1.0;
    if (clip_norm > 0) {
      double sq = 0;
      for (const auto& gt : grads)
        for (T v : gt.values()) sq += double(v) * v;
      const double norm = std::sqrt(sq);
      if (norm > clip_norm) scale = clip_norm / norm;
    }
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      auto& p = params.tensors[k];
      auto& v = velocity[k];
      const auto& gk = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = T(momentum * v[i] + scale * gk[i]);
        p[i] -= T(learning_rate * v[i]);
      }
    }
  }
};

struct StepResult {
  double loss = 0;
  std::size_t clamped_pixels = 0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One optimizer update on the mean loss of the batch.
template <class T>
StepResult train_step(std::span<const TrainingExample> batch, ModelParams<T>& params, SgdMomentum<T>& opt,
                      LossMode mode, Sharing sharing) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::vector<Tensor<T>> grads;
  for (const auto& t : params.tensors) grads.emplace_back(t.shape());
  StepResult r;
  LossStats stats;
  for (const auto& ex : batch) {
    Graph<T> g;
    const auto pv = bind_params(g, params, true);
    const auto boxes = ex.annotations.boxes();
    const auto maps = ex.annotations.region_maps();
    const auto pairs = annotation_pairs(maps, sharing);
    const auto f = forward(g, pv, params.config, image_to_tensor<T>(ex.image), boxes, pairs);
    Var loss = example_loss(g, f, boxes, ex.labels, mode, params.config, &stats);
    const double value = g.value(loss)[0];
    if (!std::isfinite(value)) throw NonFiniteLoss("train_step: non-finite loss");
    r.loss += value / double(batch.size());
    g.backward(loss);
    for (std::size_t k = 0; k < pv.all.size(); ++k) {
      if (!g.has_grad(pv.all[k])) continue;
      const auto& gk = g.grad(pv.all[k]);
      for (std::size_t i = 0; i < gk.size(); ++i) grads[k][i] += gk[i] / T(batch.size());
    }
  }
  for (const auto& gk : grads)
    if (!gk.all_finite()) throw NonFiniteLoss("train_step: non-finite gradient");
  r.clamped_pixels = stats.clamped_pixels;
  opt.step(params, grads);
  return r;
}

// Per-pixel argmax over regions; ties go to the lowest region index.
template <class T>
Segmentation argmax_segmentation(const Tensor<T>& probs) {
  const int h = probs.dim(0), w = probs.dim(1), n = probs.dim(2);
  Segmentation seg(w, h);
  for (std::size_t p = 0; p < seg.size(); ++p) {
    const T* v = probs.data() + p * n;
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (v[i] > v[best]) best = i;
    seg[p] = best + 1;
  }
  return seg;
}

template <class T>
struct Prediction {
  Segmentation labels;
  Tensor<T> probs;  // [H, W, N]
};

template <class T>
Prediction<T> predict_segmentation(const Tensor<float>& image, std::span<const Box> boxes,
                                   std::span<const RegionAnnotationPair> pairs, const ModelParams<T>& params) {
  Graph<T> g;
  const auto pv = bind_params(g, params, false);
  const auto f = forward(g, pv, params.config, image_to_tensor<T>(image), boxes, pairs);
  Prediction<T> out;
  out.probs = g.value(f.probs);
  out.labels = argmax_segmentation(out.probs);
  return out;
}

template <class T>
Prediction<T> predict_segmentation(const Tensor<float>& image, const AnnotationState& ann,
                                   const ModelParams<T>& params, Sharing sharing = Sharing::shared) {
  const auto maps = ann.region_maps();
  const auto pairs = annotation_pairs(maps, sharing);
  const auto boxes = ann.boxes();
  return predict_segmentation(image, std::span<const Box>(boxes), std::span<const RegionAnnotationPair>(pairs), params);
}

struct IoUResult {
  double mean = 0;
  std::vector<double> per_region;  // index i -> region i + 1
};

// Mean over ground-truth regions 1..N of |pred=i & Y=i| / |pred=i | Y=i|.
inline IoUResult mean_region_iou(const Segmentation& pred, const RegionLabelMap& y) {
  if (!pred.same_size(y)) throw std::invalid_argument("mean_region_iou: dimension mismatch");
  const int n = region_count(y);
  const int m = std::max(n, pred.max_label());
  std::vector<long> inter(m + 1, 0), pred_count(m + 1, 0), gt_count(m + 1, 0);
  for (std::size_t p = 0; p < y.size(); ++p) {
    const int a = pred[p], b = y[p];
    if (a >= 1 && a <= m) ++pred_count[a];
    ++gt_count[b];
    if (a == b) ++inter[b];
  }
  IoUResult r;
  for (int i = 1; i <= n; ++i) {
    const long uni = pred_count[i] + gt_count[i] - inter[i];
    r.per_region.push_back(double(inter[i]) / double(uni));
    r.mean += r.per_region.back();
  }
  r.mean /= n;
  return r;
}

}  // namespace cseg
