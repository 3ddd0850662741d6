#pragma once

// Forward and backward kernels for the operator set the U-Net needs.
// Every loop runs in a fixed, input-independent order; backward kernels
// accumulate (+=) into caller-owned gradient tensors.

#include <cstdint>
#include <vector>

#include "cloudmask/parallel.hpp"
#include "cloudmask/tensor.hpp"

namespace cloudmask {

enum class Padding { kSame, kValid };

struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int ph, pw;  // zero padding per side
  int oh, ow;
};

template <typename T>
ConvDims conv2d_dims(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& b, Padding pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(k, 4, "conv2d kernel");
  require_rank(b, 1, "conv2d bias");
  ConvDims d{};
  d.n = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = k.dim(0);
  d.kh = k.dim(2);
  d.kw = k.dim(3);
  if (k.dim(1) != d.cin) {
    throw ShapeError("conv2d: kernel " + shape_str(k.shape) + " expects " + std::to_string(k.dim(1)) +
                     " input channels but input is " + shape_str(x.shape));
  }
  if (b.dim(0) != d.cout) {
    throw ShapeError("conv2d: bias " + shape_str(b.shape) + " does not match kernel " + shape_str(k.shape));
  }
  if (pad == Padding::kSame) {
    if (d.kh % 2 == 0 || d.kw % 2 == 0) {
      throw ShapeError("conv2d: same padding requires odd kernel dims, got " + shape_str(k.shape));
    }
    d.ph = (d.kh - 1) / 2;
    d.pw = (d.kw - 1) / 2;
    d.oh = d.h;
    d.ow = d.w;
  } else {
    d.ph = 0;
    d.pw = 0;
    d.oh = d.h - d.kh + 1;
    d.ow = d.w - d.kw + 1;
    if (d.oh <= 0 || d.ow <= 0) {
      throw ShapeError("conv2d: kernel " + shape_str(k.shape) + " larger than input " + shape_str(x.shape));
    }
  }
  return d;
}

namespace detail {

// Gathers one sample into a (cin*kh*kw) x (oh*ow) patch matrix, zero-filled
// where the window leaves the image.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
  const std::int64_t span = static_cast<std::int64_t>(d.oh) * d.ow;
  std::int64_t row = 0;
  for (int c = 0; c < d.cin; ++c) {
    const T* plane = x + static_cast<std::int64_t>(c) * d.h * d.w;
    for (int u = 0; u < d.kh; ++u) {
      for (int v = 0; v < d.kw; ++v, ++row) {
        T* out = cols + row * span;
        for (int oh = 0; oh < d.oh; ++oh) {
          const int ih = oh + u - d.ph;
          T* dst = out + static_cast<std::int64_t>(oh) * d.ow;
          if (ih < 0 || ih >= d.h) {
            std::fill(dst, dst + d.ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::int64_t>(ih) * d.w;
          for (int ow = 0; ow < d.ow; ++ow) {
            const int iw = ow + v - d.pw;
            dst[ow] = (iw >= 0 && iw < d.w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-adds a patch matrix back onto the sample (adjoint of im2col).
template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* x) {
  const std::int64_t span = static_cast<std::int64_t>(d.oh) * d.ow;
  std::int64_t row = 0;
  for (int c = 0; c < d.cin; ++c) {
    T* plane = x + static_cast<std::int64_t>(c) * d.h * d.w;
    for (int u = 0; u < d.kh; ++u) {
      for (int v = 0; v < d.kw; ++v, ++row) {
        const T* src0 = cols + row * span;
        for (int oh = 0; oh < d.oh; ++oh) {
          const int ih = oh + u - d.ph;
          if (ih < 0 || ih >= d.h) continue;
          const T* src = src0 + static_cast<std::int64_t>(oh) * d.ow;
          T* dst = plane + static_cast<std::int64_t>(ih) * d.w;
          for (int ow = 0; ow < d.ow; ++ow) {
            const int iw = ow + v - d.pw;
            if (iw >= 0 && iw < d.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// C[m][j] = init[m] + sum_k A[m][k] * B[k][j]; saxpy order so the j loop
// stays contiguous and vectorizable without reassociating any reduction.
template <typename T>
void gemm_axpy(int m_dim, int k_dim, std::int64_t n_dim, const T* a, const T* b, const T* init, T* c) {
  for (int m = 0; m < m_dim; ++m) {
    T* crow = c + m * n_dim;
    const T bias = init ? init[m] : T(0);
    std::fill(crow, crow + n_dim, bias);
    const T* arow = a + static_cast<std::int64_t>(m) * k_dim;
    for (int k = 0; k < k_dim; ++k) {
      const T ak = arow[k];
      if (ak == T(0)) continue;
      const T* brow = b + k * n_dim;
      for (std::int64_t j = 0; j < n_dim; ++j) crow[j] += ak * brow[j];
    }
  }
}

// dot(a,b) over n elements with eight fixed lanes; the combine tree is
// input-independent so the result is deterministic.
template <typename T>
T dot_lanes(const T* a, const T* b, std::int64_t n) {
  T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (int l = 0; i < n; ++i, ++l) acc[l] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& b, Padding pad) {
  const ConvDims d = conv2d_dims(x, k, b, pad);
  TensorT<T> y(Shape{d.n, d.cout, d.oh, d.ow});
  const std::int64_t kdim = static_cast<std::int64_t>(d.cin) * d.kh * d.kw;
  const std::int64_t span = static_cast<std::int64_t>(d.oh) * d.ow;
  const std::int64_t xstride = static_cast<std::int64_t>(d.cin) * d.h * d.w;
  const std::int64_t ystride = static_cast<std::int64_t>(d.cout) * span;

  const int workers = std::min<std::int64_t>(max_threads(), d.n);
  std::vector<std::vector<T>> scratch(static_cast<size_t>(std::max(workers, 1)));
  parallel_for(d.n, [&](std::int64_t n) {
    std::vector<T>& cols = scratch[static_cast<size_t>(workers > 1 ? n % workers : 0)];
    cols.resize(static_cast<size_t>(kdim * span));
    detail::im2col(x.data.data() + n * xstride, d, cols.data());
    detail::gemm_axpy(d.cout, static_cast<int>(kdim), span, k.data.data(), cols.data(), b.data.data(),
                      y.data.data() + n * ystride);
  });
  return y;
}

// Accumulates gradients for input (optional), kernel and bias.
template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& k, Padding pad, const TensorT<T>& dy,
                     TensorT<T>* dx, TensorT<T>* dk, TensorT<T>* db) {
  TensorT<T> bias_shape(Shape{k.dim(0)});
  const ConvDims d = conv2d_dims(x, k, bias_shape, pad);
  const std::int64_t kdim = static_cast<std::int64_t>(d.cin) * d.kh * d.kw;
  const std::int64_t span = static_cast<std::int64_t>(d.oh) * d.ow;
  const std::int64_t xstride = static_cast<std::int64_t>(d.cin) * d.h * d.w;
  const std::int64_t ystride = static_cast<std::int64_t>(d.cout) * span;

  std::vector<T> cols(static_cast<size_t>(kdim * span));
  std::vector<T> dcols;
  if (dx) dcols.resize(static_cast<size_t>(kdim * span));

  for (int n = 0; n < d.n; ++n) {
    const T* xs = x.data.data() + n * xstride;
    const T* dys = dy.data.data() + n * ystride;
    if (dk || db) detail::im2col(xs, d, cols.data());
    if (dk) {
      for (int co = 0; co < d.cout; ++co) {
        const T* dyrow = dys + co * span;
        T* dkrow = dk->data.data() + co * kdim;
        for (std::int64_t r = 0; r < kdim; ++r) {
          dkrow[r] += detail::dot_lanes(dyrow, cols.data() + r * span, span);
        }
      }
    }
    if (db) {
      for (int co = 0; co < d.cout; ++co) {
        const T* dyrow = dys + co * span;
        T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
        std::int64_t j = 0;
        for (; j + 8 <= span; j += 8) {
          for (int l = 0; l < 8; ++l) acc[l] += dyrow[j + l];
        }
        for (int l = 0; j < span; ++j, ++l) acc[l] += dyrow[j];
        db->data[static_cast<size_t>(co)] +=
            ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
      }
    }
    if (dx) {
      // dcols = K^T * dy, then scatter back through the im2col geometry.
      for (std::int64_t r = 0; r < kdim; ++r) {
        T* row = dcols.data() + r * span;
        std::fill(row, row + span, T(0));
        for (int co = 0; co < d.cout; ++co) {
          const T a = k.data[static_cast<size_t>(co * kdim + r)];
          if (a == T(0)) continue;
          const T* dyrow = dys + co * span;
          for (std::int64_t j = 0; j < span; ++j) row[j] += a * dyrow[j];
        }
      }
      detail::col2im_add(dcols.data(), d, dx->data.data() + n * xstride);
    }
  }
}

template <typename T>
struct Pooled {
  TensorT<T> out;
  std::vector<std::int64_t> argmax;  // flat index into the input tensor
};

template <typename T>
Pooled<T> maxpool2_forward(const TensorT<T>& x) {
  require_rank(x, 4, "maxpool2 input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: spatial dims must be even, got " + shape_str(x.shape));
  }
  Pooled<T> r{TensorT<T>(Shape{n, c, h / 2, w / 2}), {}};
  r.argmax.resize(static_cast<size_t>(r.out.numel()));
  std::int64_t o = 0;
  for (int nn = 0; nn < n; ++nn) {
    for (int cc = 0; cc < c; ++cc) {
      const std::int64_t base = (static_cast<std::int64_t>(nn) * c + cc) * h * w;
      for (int i = 0; i < h; i += 2) {
        for (int j = 0; j < w; j += 2, ++o) {
          // Row-major scan with strict > keeps the first max on ties.
          std::int64_t best = base + static_cast<std::int64_t>(i) * w + j;
          T bv = x.data[static_cast<size_t>(best)];
          const std::int64_t cand[3] = {best + 1, best + w, best + w + 1};
          for (std::int64_t idx : cand) {
            const T v = x.data[static_cast<size_t>(idx)];
            if (v > bv) {
              bv = v;
              best = idx;
            }
          }
          r.out.data[static_cast<size_t>(o)] = bv;
          r.argmax[static_cast<size_t>(o)] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
void maxpool2_backward(const std::vector<std::int64_t>& argmax, const TensorT<T>& dy, TensorT<T>* dx) {
  for (std::int64_t i = 0; i < dy.numel(); ++i) {
    dx->data[static_cast<size_t>(argmax[static_cast<size_t>(i)])] += dy.data[static_cast<size_t>(i)];
  }
}

// 2x2 transposed convolution with stride 2: every input pixel scatters into
// its own output block, so blocks from distinct pixels never overlap.
template <typename T>
TensorT<T> upconv2_forward(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& b) {
  require_rank(x, 4, "upconv2 input");
  require_rank(k, 4, "upconv2 kernel");
  require_rank(b, 1, "upconv2 bias");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = k.dim(1);
  if (k.dim(0) != cin) {
    throw ShapeError("upconv2: kernel " + shape_str(k.shape) + " does not match input " + shape_str(x.shape));
  }
  if (k.dim(2) != 2 || k.dim(3) != 2) {
    throw ShapeError("upconv2: kernel spatial dims must be 2x2, got " + shape_str(k.shape));
  }
  if (b.dim(0) != cout) {
    throw ShapeError("upconv2: bias " + shape_str(b.shape) + " does not match kernel " + shape_str(k.shape));
  }
  TensorT<T> y(Shape{n, cout, 2 * h, 2 * w});
  const std::int64_t xplane = static_cast<std::int64_t>(h) * w;
  const std::int64_t yplane = 4 * xplane;
  parallel_for(static_cast<std::int64_t>(n) * cout, [&](std::int64_t task) {
    const int nn = static_cast<int>(task / cout);
    const int co = static_cast<int>(task % cout);
    T* yp = y.data.data() + (static_cast<std::int64_t>(nn) * cout + co) * yplane;
    std::fill(yp, yp + yplane, b.data[static_cast<size_t>(co)]);
    for (int ci = 0; ci < cin; ++ci) {
      const T* xp = x.data.data() + (static_cast<std::int64_t>(nn) * cin + ci) * xplane;
      const T* kp = k.data.data() + (static_cast<std::int64_t>(ci) * cout + co) * 4;
      const T k00 = kp[0], k01 = kp[1], k10 = kp[2], k11 = kp[3];
      for (int i = 0; i < h; ++i) {
        T* row0 = yp + static_cast<std::int64_t>(2 * i) * (2 * w);
        T* row1 = row0 + 2 * w;
        const T* xrow = xp + static_cast<std::int64_t>(i) * w;
        for (int j = 0; j < w; ++j) {
          const T v = xrow[j];
          row0[2 * j] += v * k00;
          row0[2 * j + 1] += v * k01;
          row1[2 * j] += v * k10;
          row1[2 * j + 1] += v * k11;
        }
      }
    }
  });
  return y;
}

template <typename T>
void upconv2_backward(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& dy, TensorT<T>* dx,
                      TensorT<T>* dk, TensorT<T>* db) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = k.dim(1);
  const std::int64_t xplane = static_cast<std::int64_t>(h) * w;
  const std::int64_t yplane = 4 * xplane;
  for (int nn = 0; nn < n; ++nn) {
    for (int co = 0; co < cout; ++co) {
      const T* dyp = dy.data.data() + (static_cast<std::int64_t>(nn) * cout + co) * yplane;
      if (db) {
        T acc = T(0);
        for (std::int64_t i = 0; i < yplane; ++i) acc += dyp[i];
        db->data[static_cast<size_t>(co)] += acc;
      }
      for (int ci = 0; ci < cin; ++ci) {
        const T* xp = x.data.data() + (static_cast<std::int64_t>(nn) * cin + ci) * xplane;
        const T* kp = k.data.data() + (static_cast<std::int64_t>(ci) * cout + co) * 4;
        T* dxp = dx ? dx->data.data() + (static_cast<std::int64_t>(nn) * cin + ci) * xplane : nullptr;
        T* dkp = dk ? dk->data.data() + (static_cast<std::int64_t>(ci) * cout + co) * 4 : nullptr;
        T g00 = T(0), g01 = T(0), g10 = T(0), g11 = T(0);
        for (int i = 0; i < h; ++i) {
          const T* row0 = dyp + static_cast<std::int64_t>(2 * i) * (2 * w);
          const T* row1 = row0 + 2 * w;
          const T* xrow = xp + static_cast<std::int64_t>(i) * w;
          T* dxrow = dxp ? dxp + static_cast<std::int64_t>(i) * w : nullptr;
          for (int j = 0; j < w; ++j) {
            const T d00 = row0[2 * j], d01 = row0[2 * j + 1], d10 = row1[2 * j], d11 = row1[2 * j + 1];
            if (dxrow) {
              dxrow[j] += d00 * kp[0] + d01 * kp[1] + d10 * kp[2] + d11 * kp[3];
            }
            if (dkp) {
              const T v = xrow[j];
              g00 += v * d00;
              g01 += v * d01;
              g10 += v * d10;
              g11 += v * d11;
            }
          }
        }
        if (dkp) {
          dkp[0] += g00;
          dkp[1] += g01;
          dkp[2] += g10;
          dkp[3] += g11;
        }
      }
    }
  }
}

template <typename T>
TensorT<T> concat_forward(const TensorT<T>& a, const TensorT<T>& b) {
  require_rank(a, 4, "concat input");
  require_rank(b, 4, "concat input");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat: batch/spatial mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  TensorT<T> y(Shape{n, ca + cb, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int nn = 0; nn < n; ++nn) {
    T* dst = y.data.data() + static_cast<std::int64_t>(nn) * (ca + cb) * plane;
    const T* sa = a.data.data() + static_cast<std::int64_t>(nn) * ca * plane;
    const T* sb = b.data.data() + static_cast<std::int64_t>(nn) * cb * plane;
    std::copy(sa, sa + ca * plane, dst);
    std::copy(sb, sb + cb * plane, dst + ca * plane);
  }
  return y;
}

template <typename T>
void concat_backward(const TensorT<T>& dy, int ca, TensorT<T>* da, TensorT<T>* db) {
  const int n = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
  const int cb = c - ca;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int nn = 0; nn < n; ++nn) {
    const T* src = dy.data.data() + static_cast<std::int64_t>(nn) * c * plane;
    if (da) {
      T* d = da->data.data() + static_cast<std::int64_t>(nn) * ca * plane;
      for (std::int64_t i = 0; i < ca * plane; ++i) d[i] += src[i];
    }
    if (db) {
      T* d = db->data.data() + static_cast<std::int64_t>(nn) * cb * plane;
      const T* s = src + ca * plane;
      for (std::int64_t i = 0; i < cb * plane; ++i) d[i] += s[i];
    }
  }
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
  TensorT<T> y;
  y.shape = x.shape;
  y.data.resize(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

template <typename T>
void relu_backward(const TensorT<T>& x, const TensorT<T>& dy, TensorT<T>* dx) {
  // Subgradient at exactly zero is zero.
  for (size_t i = 0; i < x.data.size(); ++i) {
    if (x.data[i] > T(0)) dx->data[i] += dy.data[i];
  }
}

template <typename T>
TensorT<T> sigmoid_forward(const TensorT<T>& x) {
  TensorT<T> y;
  y.shape = x.shape;
  y.data.resize(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) {
    const T v = x.data[i];
    if (v >= T(0)) {
      y.data[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y.data[i] = e / (T(1) + e);
    }
  }
  return y;
}

template <typename T>
void sigmoid_backward(const TensorT<T>& y, const TensorT<T>& dy, TensorT<T>* dx) {
  for (size_t i = 0; i < y.data.size(); ++i) {
    dx->data[i] += dy.data[i] * y.data[i] * (T(1) - y.data[i]);
  }
}

inline constexpr double kBceEps = 1e-7;

// Sum over elements of -[t ln p + (1-t) ln(1-p)] with p clamped to
// [eps, 1-eps]; accumulates in double.
template <typename T>
double bce_sum(const TensorT<T>& probs, const TensorT<T>& targets) {
  require_same_shape(probs, targets, "bce_loss");
  if (probs.numel() == 0) throw ShapeError("bce_loss: empty input");
  for (T t : targets.data) {
    if (t != T(0) && t != T(1)) throw ValueError("bce_loss: targets must be exactly 0 or 1");
  }
  double acc = 0.0;
  for (size_t i = 0; i < probs.data.size(); ++i) {
    const double raw = static_cast<double>(probs.data[i]);
    if (raw < 0.0 || raw > 1.0) {
      throw ValueError("bce_loss: probability " + std::to_string(raw) + " outside [0,1]");
    }
    const double p = std::min(1.0 - kBceEps, std::max(kBceEps, raw));
    const double t = static_cast<double>(targets.data[i]);
    acc += t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return -acc;
}

template <typename T>
TensorT<T> bce_forward(const TensorT<T>& probs, const TensorT<T>& targets) {
  return TensorT<T>::scalar(static_cast<T>(bce_sum(probs, targets) / static_cast<double>(probs.numel())));
}

template <typename T>
void bce_backward(const TensorT<T>& probs, const TensorT<T>& targets, const TensorT<T>& dy, TensorT<T>* dp) {
  const double scale = static_cast<double>(dy.data[0]) / static_cast<double>(probs.numel());
  for (size_t i = 0; i < probs.data.size(); ++i) {
    // Clamp acts as identity for the gradient so saturated wrong answers
    // still push back hard instead of going silent.
    const double p = std::min(1.0 - kBceEps, std::max(kBceEps, static_cast<double>(probs.data[i])));
    const double t = static_cast<double>(targets.data[i]);
    dp->data[i] += static_cast<T>(scale * (p - t) / (p * (1.0 - p)));
  }
}

template <typename T>
double sum_exact(const TensorT<T>& x) {
  double acc = 0.0;
  for (T v : x.data) acc += static_cast<double>(v);
  return acc;
}

template <typename T>
TensorT<T> sum_forward(const TensorT<T>& x) {
  return TensorT<T>::scalar(static_cast<T>(sum_exact(x)));
}

template <typename T>
void sum_backward(const TensorT<T>& dy, TensorT<T>* dx) {
  const T g = dy.data[0];
  for (auto& v : dx->data) v += g;
}

}  // namespace cloudmask
