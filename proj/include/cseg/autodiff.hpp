#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Graph records nodes in creation order, which is already a topological
// order, so backward() is a single reverse sweep. Graphs are single-threaded;
// independent graphs may live on different threads.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cseg/ops.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
};

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&)>;

  Var leaf(Tensor<T> value, bool requires_grad = false) { return push(std::move(value), requires_grad, {}); }

  Var push(Tensor<T> value, bool requires_grad, BackwardFn backward) {
    if (!value.all_finite()) throw std::domain_error("non-finite value produced in graph");
    nodes_.push_back(Node{std::move(value), {}, std::move(backward), requires_grad});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool any_requires_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs)
      if (requires_grad(v)) return true;
    return false;
  }

  // Gradient accumulator, zero-initialized on first access.
  Tensor<T>& grad(Var v) {
    auto& n = nodes_.at(v.id);
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  bool has_grad(Var v) const { return nodes_.at(v.id).grad.shape() == nodes_.at(v.id).value.shape(); }

  void backward(Var root) {
    if (value(root).size() != 1) throw std::invalid_argument("backward: root must be a scalar");
    grad(root)[0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.shape() != n.value.shape()) continue;
      current_ = Var{static_cast<std::uint32_t>(i)};
      n.backward(*this);
    }
  }

  // Node whose backward closure is running; closures read their output grad via this.
  Var current() const { return current_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  Var current_;
};

namespace ad {

template <class T>
Var conv2d(Graph<T>& g, Var input, Var kernel, Var bias, int stride, ops::Padding padding = ops::Padding::same) {
  auto out = ops::conv2d(g.value(input), g.value(kernel), &g.value(bias), stride, padding);
  const bool rg = g.any_requires_grad({input, kernel, bias});
  return g.push(std::move(out), rg, [=](Graph<T>& gr) {
    const auto& go = gr.grad(gr.current());
    ops::conv2d_backward(gr.value(input), gr.value(kernel), go, stride, padding,
                         gr.requires_grad(input) ? &gr.grad(input) : nullptr,
                         gr.requires_grad(kernel) ? &gr.grad(kernel) : nullptr,
                         gr.requires_grad(bias) ? &gr.grad(bias) : nullptr);
  });
}

template <class T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return g.push(std::move(out), g.requires_grad(x), [=](Graph<T>& gr) {
    const auto& go = gr.grad(gr.current());
    const auto& in = gr.value(x);
    auto& gi = gr.grad(x);
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > T(0)) gi[i] += go[i];
  });
}

// Concatenates two [H,W,*] tensors along channels.
template <class T>
Var concat_channels(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  require_rank(va, 3, "concat_channels");
  require_rank(vb, 3, "concat_channels");
  if (va.dim(0) != vb.dim(0) || va.dim(1) != vb.dim(1))
    throw std::invalid_argument("concat_channels: spatial size mismatch");
  const int h = va.dim(0), w = va.dim(1), ca = va.dim(2), cb = vb.dim(2);
  Tensor<T> out({h, w, ca + cb});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::copy_n(&va.at(y, x, 0), ca, &out.at(y, x, 0));
      std::copy_n(&vb.at(y, x, 0), cb, &out.at(y, x, ca));
    }
  return g.push(std::move(out), g.any_requires_grad({a, b}), [=](Graph<T>& gr) {
    const auto& go = gr.grad(gr.current());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (gr.requires_grad(a))
          for (int c = 0; c < ca; ++c) gr.grad(a).at(y, x, c) += go.at(y, x, c);
        if (gr.requires_grad(b))
          for (int c = 0; c < cb; ++c) gr.grad(b).at(y, x, c) += go.at(y, x, ca + c);
      }
  });
}

template <class T>
Var bilinear_crop(Graph<T>& g, Var source, const Box& box, int out_h, int out_w, double scale = 1.0) {
  auto out = ops::bilinear_crop(g.value(source), box, out_h, out_w, scale);
  return g.push(std::move(out), g.requires_grad(source), [=](Graph<T>& gr) {
    ops::bilinear_crop_backward(gr.grad(gr.current()), box, scale, gr.grad(source));
  });
}

// The fill value is a constant; only the patch receives gradient.
template <class T>
Var bilinear_paste(Graph<T>& g, Var patch, const Box& box, int canvas_h, int canvas_w, T fill) {
  auto out = ops::bilinear_paste(g.value(patch), box, canvas_h, canvas_w, fill);
  return g.push(std::move(out), g.requires_grad(patch), [=](Graph<T>& gr) {
    ops::bilinear_paste_backward(gr.grad(gr.current()), box, gr.grad(patch));
  });
}

// Stacks single-channel [H,W,1] maps into one [H,W,N] tensor.
template <class T>
Var stack_channels(Graph<T>& g, std::span<const Var> maps) {
  if (maps.empty()) throw std::invalid_argument("stack_channels: no inputs");
  const auto& first = g.value(maps[0]);
  const int h = first.dim(0), w = first.dim(1), n = static_cast<int>(maps.size());
  Tensor<T> out({h, w, n});
  bool rg = false;
  for (int i = 0; i < n; ++i) {
    const auto& m = g.value(maps[i]);
    require_shape(m, Shape{h, w, 1}, "stack_channels");
    rg = rg || g.requires_grad(maps[i]);
    for (std::size_t p = 0; p < m.size(); ++p) out[p * n + i] = m[p];
  }
  std::vector<Var> inputs(maps.begin(), maps.end());
  return g.push(std::move(out), rg, [inputs, n](Graph<T>& gr) {
    const auto& go = gr.grad(gr.current());
    for (int i = 0; i < n; ++i) {
      if (!gr.requires_grad(inputs[i])) continue;
      auto& gi = gr.grad(inputs[i]);
      for (std::size_t p = 0; p < gi.size(); ++p) gi[p] += go[p * n + i];
    }
  });
}

template <class T>
Var channel_softmax(Graph<T>& g, Var logits) {
  auto out = ops::channel_softmax(g.value(logits));
  return g.push(std::move(out), g.requires_grad(logits), [=](Graph<T>& gr) {
    const Var self = gr.current();
    ops::channel_softmax_backward(gr.value(self), gr.grad(self), gr.grad(logits));
  });
}

// Resamples an [h,w,C] map to [out_h,out_w,C] over its full extent.
template <class T>
Var resize(Graph<T>& g, Var x, int out_h, int out_w) {
  const auto& v = g.value(x);
  if (v.dim(0) == out_h && v.dim(1) == out_w) return x;
  const Box full{0, 0, double(v.dim(1) - 1), double(v.dim(0) - 1)};
  return bilinear_crop(g, x, full, out_h, out_w, 1.0);
}

template <class T>
Var sum(Graph<T>& g, Var x) {
  Tensor<T> out({1}, g.value(x).sum());
  return g.push(std::move(out), g.requires_grad(x), [=](Graph<T>& gr) {
    const T go = gr.grad(gr.current())[0];
    for (auto& v : gr.grad(x).values()) v += go;
  });
}

// 0.5 * sum(x^2)
template <class T>
Var half_squared_norm(Graph<T>& g, Var x) {
  T s = 0;
  for (T v : g.value(x).values()) s += v * v;
  Tensor<T> out({1}, T(0.5) * s);
  return g.push(std::move(out), g.requires_grad(x), [=](Graph<T>& gr) {
    const T go = gr.grad(gr.current())[0];
    const auto& in = gr.value(x);
    auto& gi = gr.grad(x);
    for (std::size_t i = 0; i < in.size(); ++i) gi[i] += go * in[i];
  });
}

template <class T>
Var scale(Graph<T>& g, Var x, T factor) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.values()) v *= factor;
  return g.push(std::move(out), g.requires_grad(x), [=](Graph<T>& gr) {
    const auto& go = gr.grad(gr.current());
    auto& gi = gr.grad(x);
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += factor * go[i];
  });
}

// Sum of same-shaped tensors.
template <class T>
Var add_n(Graph<T>& g, std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: no inputs");
  Tensor<T> out = g.value(xs[0]);
  bool rg = g.requires_grad(xs[0]);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const auto& v = g.value(xs[k]);
    require_shape(v, out.shape(), "add_n");
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
    rg = rg || g.requires_grad(xs[k]);
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return g.push(std::move(out), rg, [inputs](Graph<T>& gr) {
    const auto& go = gr.grad(gr.current());
    for (Var in : inputs) {
      if (!gr.requires_grad(in)) continue;
      auto& gi = gr.grad(in);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    }
  });
}

// sum_p weight[p] * -log(max(probs[p, label[p]], clamp)) * factor.
// Labels are zero-based channel indices. Pixels whose probability falls
// below the clamp contribute a constant and no gradient; they are counted.
template <class T>
Var weighted_nll(Graph<T>& g, Var probs, std::span<const int> labels, std::span<const T> weights, T factor,
                 std::size_t* clamped = nullptr, double clamp = 1e-12) {
  const auto& p = g.value(probs);
  const int n = p.shape().back();
  const std::size_t pixels = p.size() / n;
  if (labels.size() != pixels || weights.size() != pixels)
    throw std::invalid_argument("weighted_nll: label/weight count does not match pixel count");
  T loss = 0;
  std::size_t nclamped = 0;
  for (std::size_t i = 0; i < pixels; ++i) {
    if (labels[i] < 0 || labels[i] >= n) throw std::invalid_argument("weighted_nll: label out of range");
    const T pv = p[i * n + labels[i]];
    if (pv < T(clamp)) ++nclamped;
    loss += weights[i] * -std::log(std::max(pv, T(clamp)));
  }
  if (clamped) *clamped += nclamped;
  Tensor<T> out({1}, loss * factor);
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<T> wts(weights.begin(), weights.end());
  return g.push(std::move(out), g.requires_grad(probs), [=, lab = std::move(lab), wts = std::move(wts)](Graph<T>& gr) {
    const T go = gr.grad(gr.current())[0] * factor;
    const auto& pv = gr.value(probs);
    auto& gp = gr.grad(probs);
    for (std::size_t i = 0; i < lab.size(); ++i) {
      const std::size_t idx = i * n + lab[i];
      if (pv[idx] < T(clamp)) continue;
      gp[idx] -= go * wts[i] / pv[idx];
    }
  });
}

// Mean over elements of the logistic loss with binary targets, computed in the
// stable form max(l,0) - l*t + log(1 + exp(-|l|)).
template <class T>
Var sigmoid_bce_mean(Graph<T>& g, Var logits, const Tensor<T>& targets) {
  const auto& l = g.value(logits);
  require_shape(targets, l.shape(), "sigmoid_bce_mean targets");
  T s = 0;
  for (std::size_t i = 0; i < l.size(); ++i)
    s += std::max(l[i], T(0)) - l[i] * targets[i] + std::log1p(std::exp(-std::abs(l[i])));
  const T inv = T(1) / static_cast<T>(l.size());
  Tensor<T> out({1}, s * inv);
  return g.push(std::move(out), g.requires_grad(logits), [=](Graph<T>& gr) {
    const T go = gr.grad(gr.current())[0] * inv;
    const auto& lv = gr.value(logits);
    auto& gl = gr.grad(logits);
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const T sig = T(1) / (T(1) + std::exp(-lv[i]));
      gl[i] += go * (sig - targets[i]);
    }
  });
}

}  // namespace ad

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_param = 0, worst_index = 0;
  double analytic = 0, numeric = 0;
  std::size_t entries = 0;
};

template <class T>
using LossBuilder = std::function<Var(Graph<T>&, std::span<const Var>)>;

namespace detail {

template <class T>
T evaluate_loss(const LossBuilder<T>& loss_fn, const std::vector<Tensor<T>>& params,
                std::vector<Tensor<T>>* grads) {
  Graph<T> g;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(g.leaf(p, grads != nullptr));
  Var loss = loss_fn(g, vars);
  const T value = g.value(loss)[0];
  if (!std::isfinite(value)) throw std::domain_error("gradient_check: non-finite loss");
  if (grads) {
    g.backward(loss);
    for (Var v : vars) grads->push_back(g.has_grad(v) ? g.grad(v) : Tensor<T>(g.value(v).shape()));
  }
  return value;
}

}  // namespace detail

// Compares reverse-mode gradients of every parameter entry (computed by
// loss_fn in T) against central finite differences of reference_fn, the same
// loss built in R. A wider R lowers the roundoff floor of the difference
// quotient. Relative error uses max(|a|, |b|, 1e-8) as denominator.
template <class T, class R>
GradCheckResult gradient_check(const LossBuilder<T>& loss_fn, const LossBuilder<R>& reference_fn,
                               const std::vector<Tensor<T>>& params, R epsilon) {
  if (!(epsilon > R(0))) throw std::invalid_argument("gradient_check: epsilon must be positive");
  std::vector<Tensor<T>> analytic;
  detail::evaluate_loss(loss_fn, params, &analytic);

  std::vector<Tensor<R>> ref;
  for (const auto& p : params) ref.push_back(p.template cast<R>());
  GradCheckResult r;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    for (std::size_t i = 0; i < ref[k].size(); ++i) {
      const R orig = ref[k][i];
      ref[k][i] = orig + epsilon;
      const R up = detail::evaluate_loss<R>(reference_fn, ref, nullptr);
      ref[k][i] = orig - epsilon;
      const R down = detail::evaluate_loss<R>(reference_fn, ref, nullptr);
      ref[k][i] = orig;
      const double numeric = double((up - down) / (R(2) * epsilon));
      const double a = double(analytic[k][i]);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++r.entries;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_param = k;
        r.worst_index = i;
        r.analytic = a;
        r.numeric = numeric;
      }
    }
  }
  return r;
}

template <class T>
GradCheckResult gradient_check(const LossBuilder<T>& loss_fn, const std::vector<Tensor<T>>& params, T epsilon) {
  return gradient_check<T, T>(loss_fn, loss_fn, params, epsilon);
}

}  // namespace cseg
