#pragma once

// Forward and backward kernels on plain tensors. The autodiff graph wires
// these together; they are also usable directly for inference.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "cseg/box.hpp"
#include "cseg/tensor.hpp"

namespace cseg::ops {

enum class Padding { same, valid };

struct ConvGeometry {
  int out_h = 0, out_w = 0, pad = 0;
};

inline ConvGeometry conv_geometry(int h, int w, int k, int stride, Padding padding) {
  if (k <= 0 || k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvGeometry g;
  if (padding == Padding::same) {
    g.pad = k / 2;
    g.out_h = (h - 1) / stride + 1;
    g.out_w = (w - 1) / stride + 1;
  } else {
    if (h < k || w < k) throw std::invalid_argument("conv2d: input smaller than kernel with valid padding");
    g.out_h = (h - k) / stride + 1;
    g.out_w = (w - k) / stride + 1;
  }
  return g;
}

template <class T>
void check_conv_shapes(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (kernel.dim(0) != kernel.dim(1)) throw std::invalid_argument("conv2d: kernel must be square");
  if (kernel.dim(2) != input.dim(2))
    throw std::invalid_argument("conv2d: input has " + std::to_string(input.dim(2)) + " channels, kernel expects " +
                                std::to_string(kernel.dim(2)));
  if (bias) require_shape(*bias, Shape{kernel.dim(3)}, "conv2d bias");
}

// Cross-correlation. input [H,W,Cin], kernel [k,k,Cin,Cout], bias [Cout].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias, int stride, Padding padding) {
  check_conv_shapes(input, kernel, bias);
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int k = kernel.dim(0), cout = kernel.dim(3);
  const auto g = conv_geometry(h, w, k, stride, padding);
  Tensor<T> out({g.out_h, g.out_w, cout});
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      T* o = &out.at(oy, ox, 0);
      if (bias)
        for (int co = 0; co < cout; ++co) o[co] = (*bias)[co];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - g.pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - g.pad;
          if (ix < 0 || ix >= w) continue;
          const T* in = &input.at(iy, ix, 0);
          const T* kw = kernel.data() + (static_cast<std::size_t>(ky) * k + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const T v = in[ci];
            if (v == T(0)) continue;
            const T* kr = kw + static_cast<std::size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) o[co] += v * kr[co];
          }
        }
      }
    }
  }
  return out;
}

// Accumulates gradients of conv2d into the optional outputs.
template <class T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& grad_out, int stride,
                     Padding padding, Tensor<T>* grad_input, Tensor<T>* grad_kernel, Tensor<T>* grad_bias) {
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int k = kernel.dim(0), cout = kernel.dim(3);
  const auto g = conv_geometry(h, w, k, stride, padding);
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      const T* go = &grad_out.at(oy, ox, 0);
      if (grad_bias)
        for (int co = 0; co < cout; ++co) (*grad_bias)[co] += go[co];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - g.pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - g.pad;
          if (ix < 0 || ix >= w) continue;
          const std::size_t koff = (static_cast<std::size_t>(ky) * k + kx) * cin * cout;
          const T* in = &input.at(iy, ix, 0);
          for (int ci = 0; ci < cin; ++ci) {
            const T* kr = kernel.data() + koff + static_cast<std::size_t>(ci) * cout;
            if (grad_input) {
              T acc = 0;
              for (int co = 0; co < cout; ++co) acc += go[co] * kr[co];
              grad_input->at(iy, ix, ci) += acc;
            }
            if (grad_kernel) {
              const T v = in[ci];
              if (v == T(0)) continue;
              T* gk = grad_kernel->data() + koff + static_cast<std::size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) gk[co] += v * go[co];
            }
          }
        }
      }
    }
  }
}

// Bilinear interpolation taps at a continuous position, with coordinates
// clamped to the sampled grid (border replication).
struct BilinearTaps {
  int y0, x0, y1, x1;
  double wy, wx;  // weight of the (y1, x1) neighbor along each axis
};

inline BilinearTaps bilinear_taps(double y, double x, int h, int w) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  BilinearTaps t;
  t.y0 = static_cast<int>(std::floor(y));
  t.x0 = static_cast<int>(std::floor(x));
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.wy = y - t.y0;
  t.wx = x - t.x0;
  return t;
}

// Sampling grid of an RoI crop: sample i sits at the center of output cell i
// of the box extent, expressed in source coordinates (image coordinate * scale).
struct CropGrid {
  double start_y, step_y, start_x, step_x;
  double y(int i) const { return start_y + (i + 0.5) * step_y; }
  double x(int j) const { return start_x + (j + 0.5) * step_x; }
};

inline CropGrid crop_grid(const Box& box, int out_h, int out_w, double scale) {
  require_valid_box(box, "bilinear_crop");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_crop: output size must be >= 1");
  if (!(scale > 0)) throw std::invalid_argument("bilinear_crop: scale must be positive");
  return CropGrid{(box.y0 - 0.5) * scale, box.extent_h() * scale / out_h, (box.x0 - 0.5) * scale,
                  box.extent_w() * scale / out_w};
}

// RoI-align with a single sample per output cell. `box` is given in image
// pixel-center coordinates; `scale` maps them onto the source grid.
template <class T>
Tensor<T> bilinear_crop(const Tensor<T>& source, const Box& box, int out_h, int out_w, double scale = 1.0) {
  require_rank(source, 3, "bilinear_crop source");
  const auto grid = crop_grid(box, out_h, out_w, scale);
  const int h = source.dim(0), w = source.dim(1), c = source.dim(2);
  Tensor<T> out({out_h, out_w, c});
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      const auto t = bilinear_taps(grid.y(i), grid.x(j), h, w);
      const T w00 = T((1 - t.wy) * (1 - t.wx)), w01 = T((1 - t.wy) * t.wx);
      const T w10 = T(t.wy * (1 - t.wx)), w11 = T(t.wy * t.wx);
      const T* a = &source.at(t.y0, t.x0, 0);
      const T* b = &source.at(t.y0, t.x1, 0);
      const T* d = &source.at(t.y1, t.x0, 0);
      const T* e = &source.at(t.y1, t.x1, 0);
      T* o = &out.at(i, j, 0);
      for (int ch = 0; ch < c; ++ch) o[ch] = w00 * a[ch] + w01 * b[ch] + w10 * d[ch] + w11 * e[ch];
    }
  }
  return out;
}

template <class T>
void bilinear_crop_backward(const Tensor<T>& grad_out, const Box& box, double scale, Tensor<T>& grad_source) {
  const int out_h = grad_out.dim(0), out_w = grad_out.dim(1), c = grad_out.dim(2);
  const auto grid = crop_grid(box, out_h, out_w, scale);
  const int h = grad_source.dim(0), w = grad_source.dim(1);
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      const auto t = bilinear_taps(grid.y(i), grid.x(j), h, w);
      const T w00 = T((1 - t.wy) * (1 - t.wx)), w01 = T((1 - t.wy) * t.wx);
      const T w10 = T(t.wy * (1 - t.wx)), w11 = T(t.wy * t.wx);
      const T* g = &grad_out.at(i, j, 0);
      for (int ch = 0; ch < c; ++ch) {
        grad_source.at(t.y0, t.x0, ch) += w00 * g[ch];
        grad_source.at(t.y0, t.x1, ch) += w01 * g[ch];
        grad_source.at(t.y1, t.x0, ch) += w10 * g[ch];
        grad_source.at(t.y1, t.x1, ch) += w11 * g[ch];
      }
    }
  }
}

// Position of a canvas pixel center inside the patch grid of a pasted box;
// inverse of the crop sampling grid.
inline double paste_coord(int pixel, double box_lo, double extent, int patch_size) {
  return (pixel - (box_lo - 0.5)) / extent * patch_size - 0.5;
}

// Resizes a [h',w',C] patch onto the footprint of `box` in a [H,W,C] canvas.
// Pixels outside the footprint receive `fill`.
template <class T>
Tensor<T> bilinear_paste(const Tensor<T>& patch, const Box& box, int canvas_h, int canvas_w, T fill) {
  require_rank(patch, 3, "bilinear_paste patch");
  require_valid_box(box, "bilinear_paste");
  const int ph = patch.dim(0), pw = patch.dim(1), c = patch.dim(2);
  Tensor<T> out({canvas_h, canvas_w, c}, fill);
  for (int y = box.first_row(); y < box.end_row(canvas_h); ++y) {
    const double v = paste_coord(y, box.y0, box.extent_h(), ph);
    for (int x = box.first_col(); x < box.end_col(canvas_w); ++x) {
      const double u = paste_coord(x, box.x0, box.extent_w(), pw);
      const auto t = bilinear_taps(v, u, ph, pw);
      const T w00 = T((1 - t.wy) * (1 - t.wx)), w01 = T((1 - t.wy) * t.wx);
      const T w10 = T(t.wy * (1 - t.wx)), w11 = T(t.wy * t.wx);
      for (int ch = 0; ch < c; ++ch)
        out.at(y, x, ch) = w00 * patch.at(t.y0, t.x0, ch) + w01 * patch.at(t.y0, t.x1, ch) +
                           w10 * patch.at(t.y1, t.x0, ch) + w11 * patch.at(t.y1, t.x1, ch);
    }
  }
  return out;
}

template <class T>
void bilinear_paste_backward(const Tensor<T>& grad_out, const Box& box, Tensor<T>& grad_patch) {
  const int ph = grad_patch.dim(0), pw = grad_patch.dim(1), c = grad_patch.dim(2);
  const int canvas_h = grad_out.dim(0), canvas_w = grad_out.dim(1);
  for (int y = box.first_row(); y < box.end_row(canvas_h); ++y) {
    const double v = paste_coord(y, box.y0, box.extent_h(), ph);
    for (int x = box.first_col(); x < box.end_col(canvas_w); ++x) {
      const double u = paste_coord(x, box.x0, box.extent_w(), pw);
      const auto t = bilinear_taps(v, u, ph, pw);
      const T w00 = T((1 - t.wy) * (1 - t.wx)), w01 = T((1 - t.wy) * t.wx);
      const T w10 = T(t.wy * (1 - t.wx)), w11 = T(t.wy * t.wx);
      for (int ch = 0; ch < c; ++ch) {
        const T g = grad_out.at(y, x, ch);
        grad_patch.at(t.y0, t.x0, ch) += w00 * g;
        grad_patch.at(t.y0, t.x1, ch) += w01 * g;
        grad_patch.at(t.y1, t.x0, ch) += w10 * g;
        grad_patch.at(t.y1, t.x1, ch) += w11 * g;
      }
    }
  }
}

// Softmax over the last axis with max subtraction.
template <class T>
Tensor<T> channel_softmax(const Tensor<T>& logits) {
  if (logits.rank() == 0 || logits.shape().back() < 1) throw std::invalid_argument("channel_softmax: need N >= 1");
  const int n = logits.shape().back();
  Tensor<T> out(logits.shape());
  const std::size_t pixels = logits.size() / n;
  for (std::size_t p = 0; p < pixels; ++p) {
    const T* l = logits.data() + p * n;
    T* o = out.data() + p * n;
    const T m = *std::max_element(l, l + n);
    T s = 0;
    for (int i = 0; i < n; ++i) s += (o[i] = std::exp(l[i] - m));
    for (int i = 0; i < n; ++i) o[i] /= s;
  }
  return out;
}

template <class T>
void channel_softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_out, Tensor<T>& grad_logits) {
  const int n = probs.shape().back();
  const std::size_t pixels = probs.size() / n;
  for (std::size_t p = 0; p < pixels; ++p) {
    const T* pr = probs.data() + p * n;
    const T* g = grad_out.data() + p * n;
    T dot = 0;
    for (int i = 0; i < n; ++i) dot += pr[i] * g[i];
    T* gl = grad_logits.data() + p * n;
    for (int i = 0; i < n; ++i) gl[i] += pr[i] * (g[i] - dot);
  }
}

}  // namespace cseg::ops
