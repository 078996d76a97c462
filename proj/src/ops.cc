// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mcdc::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tape &TapeOf(const Var &a) {
  if (!a.valid()) throw std::logic_error("operation on an unbound Var");
  return *a.tape();
}

void SameShape(const Var &a, const Var &b, const char *op) {
  CheckSameShape(a.shape(), b.shape(), op);
}

int NormAxis(int axis, int rank, const char *op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

// Splits a shape into (outer, axis, inner) extents.
void AxisExtents(const Shape &s, int axis, int64_t *outer, int64_t *mid,
                 int64_t *inner) {
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= s[i];
  *mid = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) *inner *= s[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var Add(const Var &a, const Var &b) {
  SameShape(a, b, "Add");
  Tensor out = a.value();
  out.AddInPlace(b.value());
  return TapeOf(a).Record(std::move(out), {a, b},
                          [](const Tensor &g, std::span<Tensor *const> gs) {
                            if (gs[0]) gs[0]->AddInPlace(g);
                            if (gs[1]) gs[1]->AddInPlace(g);
                          },
                          "add");
}

Var Sub(const Var &a, const Var &b) {
  SameShape(a, b, "Sub");
  Tensor out = a.value();
  out.AddInPlace(b.value(), -1.0);
  return TapeOf(a).Record(std::move(out), {a, b},
                          [](const Tensor &g, std::span<Tensor *const> gs) {
                            if (gs[0]) gs[0]->AddInPlace(g);
                            if (gs[1]) gs[1]->AddInPlace(g, -1.0);
                          },
                          "sub");
}

Var Mul(const Var &a, const Var &b) {
  SameShape(a, b, "Mul");
  const Tensor &x = a.value(), &y = b.value();
  Tensor out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] * y[i];
  return TapeOf(a).Record(
      std::move(out), {a, b},
      [x, y](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t i = 0; i < g.numel(); ++i) {
          if (gs[0]) (*gs[0])[i] += g[i] * y[i];
          if (gs[1]) (*gs[1])[i] += g[i] * x[i];
        }
      },
      "mul");
}

Var Scale(const Var &a, double s) {
  Tensor out = a.value();
  out.ScaleInPlace(s);
  return TapeOf(a).Record(std::move(out), {a},
                          [s](const Tensor &g, std::span<Tensor *const> gs) {
                            gs[0]->AddInPlace(g, s);
                          },
                          "scale");
}

Var Square(const Var &a) {
  const Tensor &x = a.value();
  Tensor out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] * x[i];
  return TapeOf(a).Record(std::move(out), {a},
                          [x](const Tensor &g, std::span<Tensor *const> gs) {
                            for (int64_t i = 0; i < g.numel(); ++i)
                              (*gs[0])[i] += 2.0 * x[i] * g[i];
                          },
                          "square");
}

Var Relu(const Var &a) { return LeakyRelu(a, 0.0); }

Var LeakyRelu(const Var &a, double slope) {
  const Tensor &x = a.value();
  Tensor out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  return TapeOf(a).Record(
      std::move(out), {a},
      [x, slope](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t i = 0; i < g.numel(); ++i)
          (*gs[0])[i] += x[i] > 0.0 ? g[i] : slope * g[i];
      },
      slope == 0.0 ? "relu" : "leaky_relu");
}

Var LogFloor(const Var &a, double floor) {
  const Tensor &x = a.value();
  Tensor out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::log(std::max(x[i], floor));
  return TapeOf(a).Record(
      std::move(out), {a},
      [x, floor](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t i = 0; i < g.numel(); ++i)
          if (x[i] > floor) (*gs[0])[i] += g[i] / x[i];
      },
      "log_floor");
}

Var Sum(const Var &a) {
  Tensor out = Tensor::Scalar(a.value().Sum());
  return TapeOf(a).Record(std::move(out), {a},
                          [](const Tensor &g, std::span<Tensor *const> gs) {
                            for (double &v : gs[0]->values()) v += g[0];
                          },
                          "sum");
}

Var Mean(const Var &a) {
  const double n = static_cast<double>(a.value().numel());
  Tensor out = Tensor::Scalar(a.value().Sum() / n);
  return TapeOf(a).Record(std::move(out), {a},
                          [n](const Tensor &g, std::span<Tensor *const> gs) {
                            for (double &v : gs[0]->values()) v += g[0] / n;
                          },
                          "mean");
}

Var LinearCombination(const std::vector<Var> &terms,
                      const std::vector<double> &weights) {
  if (terms.empty() || terms.size() != weights.size())
    throw std::invalid_argument("LinearCombination: terms/weights mismatch");
  Tensor out = Tensor::Zeros(terms[0].shape());
  for (size_t i = 0; i < terms.size(); ++i) {
    SameShape(terms[0], terms[i], "LinearCombination");
    out.AddInPlace(terms[i].value(), weights[i]);
  }
  return TapeOf(terms[0]).Record(
      std::move(out), terms,
      [weights](const Tensor &g, std::span<Tensor *const> gs) {
        for (size_t i = 0; i < gs.size(); ++i)
          if (gs[i] && weights[i] != 0.0) gs[i]->AddInPlace(g, weights[i]);
      },
      "linear_combination");
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var Reshape(const Var &a, Shape shape) {
  Tensor out = a.value().Reshaped(std::move(shape));
  return TapeOf(a).Record(std::move(out), {a},
                          [](const Tensor &g, std::span<Tensor *const> gs) {
                            auto dst = gs[0]->values();
                            for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
                          },
                          "reshape");
}

Var Concat(const std::vector<Var> &parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("Concat: no inputs");
  const Shape &s0 = parts[0].shape();
  axis = NormAxis(axis, static_cast<int>(s0.size()), "Concat");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<int64_t> mids;
  for (const Var &p : parts) {
    Shape s = p.shape();
    if (s.size() != s0.size())
      throw ShapeError("Concat: rank mismatch " + ShapeString(s0) + " vs " +
                       ShapeString(s));
    for (size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != s0[i])
        throw ShapeError("Concat: shape mismatch " + ShapeString(s0) + " vs " +
                         ShapeString(s) + " along non-concat axis");
    mids.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  int64_t outer, mid, inner;
  AxisExtents(out_shape, axis, &outer, &mid, &inner);
  Tensor out(out_shape);
  int64_t offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const Tensor &src = parts[k].value();
    const int64_t len = mids[k] * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(src.data() + o * len, len,
                  out.data() + o * mid * inner + offset * inner);
    offset += mids[k];
  }
  return TapeOf(parts[0]).Record(
      std::move(out), parts,
      [mids, outer, mid, inner](const Tensor &g, std::span<Tensor *const> gs) {
        int64_t offset = 0;
        for (size_t k = 0; k < gs.size(); ++k) {
          const int64_t len = mids[k] * inner;
          if (gs[k]) {
            double *dst = gs[k]->data();
            for (int64_t o = 0; o < outer; ++o) {
              const double *src = g.data() + o * mid * inner + offset * inner;
              for (int64_t i = 0; i < len; ++i) dst[o * len + i] += src[i];
            }
          }
          offset += mids[k];
        }
      },
      "concat");
}

Var Slice(const Var &a, int axis, int64_t start, int64_t length) {
  const Shape &s = a.shape();
  axis = NormAxis(axis, static_cast<int>(s.size()), "Slice");
  if (start < 0 || length <= 0 || start + length > s[axis])
    throw ShapeError("Slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for " +
                     ShapeString(s));
  int64_t outer, mid, inner;
  AxisExtents(s, axis, &outer, &mid, &inner);
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const Tensor &x = a.value();
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(x.data() + (o * mid + start) * inner, length * inner,
                out.data() + o * length * inner);
  return TapeOf(a).Record(
      std::move(out), {a},
      [outer, mid, inner, start, length](const Tensor &g,
                                         std::span<Tensor *const> gs) {
        for (int64_t o = 0; o < outer; ++o) {
          double *dst = gs[0]->data() + (o * mid + start) * inner;
          const double *src = g.data() + o * length * inner;
          for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
        }
      },
      "slice");
}

Var PermuteChannels(const Var &a, const std::vector<int64_t> &perm) {
  const Shape &s = a.shape();
  if (s.size() < 2 || static_cast<int64_t>(perm.size()) != s[1])
    throw ShapeError("PermuteChannels: permutation length " +
                     std::to_string(perm.size()) + " does not match " +
                     ShapeString(s));
  int64_t outer, mid, inner;
  AxisExtents(s, 1, &outer, &mid, &inner);
  Tensor out(s);
  const Tensor &x = a.value();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t c = 0; c < mid; ++c)
      std::copy_n(x.data() + (o * mid + perm[c]) * inner, inner,
                  out.data() + (o * mid + c) * inner);
  return TapeOf(a).Record(
      std::move(out), {a},
      [perm, outer, mid, inner](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t c = 0; c < mid; ++c) {
            double *dst = gs[0]->data() + (o * mid + perm[c]) * inner;
            const double *src = g.data() + (o * mid + c) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
      },
      "permute_channels");
}

Var RepeatLastAxis(const Var &a, int64_t factor, int64_t out_len,
                   int64_t offset) {
  const Shape &s = a.shape();
  const int64_t in_len = s.back();
  if (factor <= 0 || out_len <= 0 || offset < 0 || out_len > in_len * factor)
    throw ShapeError("RepeatLastAxis: cannot produce length " +
                     std::to_string(out_len) + " from " + ShapeString(s) +
                     " with factor " + std::to_string(factor));
  const int64_t rows = a.value().numel() / in_len;
  Shape out_shape = s;
  out_shape.back() = out_len;
  Tensor out(out_shape);
  const Tensor &x = a.value();
  std::vector<int64_t> src(out_len);
  for (int64_t t = 0; t < out_len; ++t)
    src[t] = std::min((t + offset) / factor, in_len - 1);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t t = 0; t < out_len; ++t)
      out[r * out_len + t] = x[r * in_len + src[t]];
  return TapeOf(a).Record(
      std::move(out), {a},
      [rows, in_len, out_len, src](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t t = 0; t < out_len; ++t)
            (*gs[0])[r * in_len + src[t]] += g[r * out_len + t];
      },
      "repeat_last_axis");
}

// ---------------------------------------------------------------------------
// Complex helpers

Var Magnitude(const Var &re, const Var &im) {
  SameShape(re, im, "Magnitude");
  const Tensor &r = re.value(), &i = im.value();
  Tensor out(r.shape());
  for (int64_t k = 0; k < out.numel(); ++k) out[k] = std::hypot(r[k], i[k]);
  Tensor mag = out;
  return TapeOf(re).Record(
      std::move(out), {re, im},
      [r, i, mag](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t k = 0; k < g.numel(); ++k) {
          if (mag[k] == 0.0) continue;
          if (gs[0]) (*gs[0])[k] += g[k] * r[k] / mag[k];
          if (gs[1]) (*gs[1])[k] += g[k] * i[k] / mag[k];
        }
      },
      "magnitude");
}

Var Power(const Var &re, const Var &im) {
  SameShape(re, im, "Power");
  const Tensor &r = re.value(), &i = im.value();
  Tensor out(r.shape());
  for (int64_t k = 0; k < out.numel(); ++k) out[k] = r[k] * r[k] + i[k] * i[k];
  return TapeOf(re).Record(
      std::move(out), {re, im},
      [r, i](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t k = 0; k < g.numel(); ++k) {
          if (gs[0]) (*gs[0])[k] += 2.0 * g[k] * r[k];
          if (gs[1]) (*gs[1])[k] += 2.0 * g[k] * i[k];
        }
      },
      "power");
}

// ---------------------------------------------------------------------------
// Linear maps

Var MatMulAxis1(const Var &w, const Var &x) {
  const Shape &ws = w.shape(), &xs = x.shape();
  if (ws.size() != 2 || xs.size() != 3 || ws[1] != xs[1])
    throw ShapeError("MatMulAxis1: weight " + ShapeString(ws) +
                     " incompatible with input " + ShapeString(xs));
  const int64_t n = xs[0], f = xs[1], t = xs[2], m = ws[0];
  Tensor out({n, m, t});
  ConstMapMat W(w.value().data(), m, f);
  for (int64_t b = 0; b < n; ++b) {
    ConstMapMat X(x.value().data() + b * f * t, f, t);
    MapMat Y(out.data() + b * m * t, m, t);
    Y.noalias() = W * X;
  }
  Tensor wv = w.value(), xv = x.value();
  return TapeOf(x).Record(
      std::move(out), {w, x},
      [wv, xv, n, f, t, m](const Tensor &g, std::span<Tensor *const> gs) {
        ConstMapMat W(wv.data(), m, f);
        for (int64_t b = 0; b < n; ++b) {
          ConstMapMat G(g.data() + b * m * t, m, t);
          ConstMapMat X(xv.data() + b * f * t, f, t);
          if (gs[0]) MapMat(gs[0]->data(), m, f).noalias() += G * X.transpose();
          if (gs[1])
            MapMat(gs[1]->data() + b * f * t, f, t).noalias() += W.transpose() * G;
        }
      },
      "matmul_axis1");
}

Var AddChannelBias(const Var &x, const Var &bias) {
  const Shape &s = x.shape();
  if (s.size() < 2 || bias.shape() != Shape{s[1]})
    throw ShapeError("AddChannelBias: bias " + ShapeString(bias.shape()) +
                     " does not match channels of " + ShapeString(s));
  int64_t outer, mid, inner;
  AxisExtents(s, 1, &outer, &mid, &inner);
  Tensor out = x.value();
  const Tensor &b = bias.value();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t c = 0; c < mid; ++c)
      for (int64_t i = 0; i < inner; ++i) out[(o * mid + c) * inner + i] += b[c];
  return TapeOf(x).Record(
      std::move(out), {x, bias},
      [outer, mid, inner](const Tensor &g, std::span<Tensor *const> gs) {
        if (gs[0]) gs[0]->AddInPlace(g);
        if (gs[1])
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t c = 0; c < mid; ++c)
              for (int64_t i = 0; i < inner; ++i)
                (*gs[1])[c] += g[(o * mid + c) * inner + i];
      },
      "add_channel_bias");
}

// ---------------------------------------------------------------------------
// Convolution

int64_t Conv2dGeometry::OutH(int64_t in_h, int64_t kh) const {
  return (in_h + 2 * pad_h - dilation_h * (kh - 1) - 1) / stride_h + 1;
}

int64_t Conv2dGeometry::OutW(int64_t in_w, int64_t kw) const {
  return (in_w + 2 * pad_w - dilation_w * (kw - 1) - 1) / stride_w + 1;
}

Conv2dGeometry Conv2dGeometry::Same(int kh, int kw, int stride_h, int stride_w,
                                    int dilation_h, int dilation_w) {
  if (kh % 2 == 0 || kw % 2 == 0)
    throw std::invalid_argument("same padding requires odd kernel sizes");
  Conv2dGeometry g;
  g.stride_h = stride_h;
  g.stride_w = stride_w;
  g.dilation_h = dilation_h;
  g.dilation_w = dilation_w;
  g.pad_h = dilation_h * (kh - 1) / 2;
  g.pad_w = dilation_w * (kw - 1) / 2;
  return g;
}

namespace {

struct ConvDims {
  int64_t c, h, w;     // image channels and spatial extent
  int64_t kh, kw;      // kernel
  int64_t oh, ow;      // column spatial extent
};

// cols: (c * kh * kw, oh * ow)
void Im2Col(const double *img, const ConvDims &d, const Conv2dGeometry &g,
            double *cols) {
  const int64_t ospatial = d.oh * d.ow;
  for (int64_t c = 0; c < d.c; ++c)
    for (int64_t ki = 0; ki < d.kh; ++ki)
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        double *row = cols + ((c * d.kh + ki) * d.kw + kj) * ospatial;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t iy = oy * g.stride_h - g.pad_h + ki * g.dilation_h;
          double *dst = row + oy * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill_n(dst, d.ow, 0.0);
            continue;
          }
          const double *src = img + (c * d.h + iy) * d.w;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t ix = ox * g.stride_w - g.pad_w + kj * g.dilation_w;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
          }
        }
      }
}

// Adjoint of Im2Col: accumulates columns into the image.
void Col2Im(const double *cols, const ConvDims &d, const Conv2dGeometry &g,
            double *img) {
  const int64_t ospatial = d.oh * d.ow;
  for (int64_t c = 0; c < d.c; ++c)
    for (int64_t ki = 0; ki < d.kh; ++ki)
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        const double *row = cols + ((c * d.kh + ki) * d.kw + kj) * ospatial;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t iy = oy * g.stride_h - g.pad_h + ki * g.dilation_h;
          if (iy < 0 || iy >= d.h) continue;
          const double *src = row + oy * d.ow;
          double *dst = img + (c * d.h + iy) * d.w;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t ix = ox * g.stride_w - g.pad_w + kj * g.dilation_w;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

Var Conv2d(const Var &x, const Var &w, const Conv2dGeometry &geom) {
  const Shape &xs = x.shape(), &ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
    throw ShapeError("Conv2d: input " + ShapeString(xs) +
                     " incompatible with weight " + ShapeString(ws));
  const int64_t n = xs[0], cout = ws[0];
  ConvDims d{xs[1], xs[2], xs[3], ws[2], ws[3], 0, 0};
  d.oh = geom.OutH(d.h, d.kh);
  d.ow = geom.OutW(d.w, d.kw);
  if (d.oh <= 0 || d.ow <= 0)
    throw ShapeError("Conv2d: input " + ShapeString(xs) +
                     " too small for kernel " + ShapeString(ws));
  const int64_t krows = d.c * d.kh * d.kw, ospatial = d.oh * d.ow;
  const int64_t in_stride = d.c * d.h * d.w, out_stride = cout * ospatial;
  Tensor out({n, cout, d.oh, d.ow});
  std::vector<double> cols(krows * ospatial);
  ConstMapMat W(w.value().data(), cout, krows);
  for (int64_t b = 0; b < n; ++b) {
    Im2Col(x.value().data() + b * in_stride, d, geom, cols.data());
    MapMat(out.data() + b * out_stride, cout, ospatial).noalias() =
        W * ConstMapMat(cols.data(), krows, ospatial);
  }
  Tensor xv = x.value(), wv = w.value();
  return TapeOf(x).Record(
      std::move(out), {x, w},
      [xv, wv, d, geom, n, cout, krows, ospatial, in_stride, out_stride](
          const Tensor &g, std::span<Tensor *const> gs) {
        std::vector<double> cols(krows * ospatial);
        ConstMapMat W(wv.data(), cout, krows);
        for (int64_t b = 0; b < n; ++b) {
          ConstMapMat G(g.data() + b * out_stride, cout, ospatial);
          if (gs[1]) {
            Im2Col(xv.data() + b * in_stride, d, geom, cols.data());
            MapMat(gs[1]->data(), cout, krows).noalias() +=
                G * ConstMapMat(cols.data(), krows, ospatial).transpose();
          }
          if (gs[0]) {
            MapMat(cols.data(), krows, ospatial).noalias() = W.transpose() * G;
            Col2Im(cols.data(), d, geom, gs[0]->data() + b * in_stride);
          }
        }
      },
      "conv2d");
}

Var ConvTranspose2d(const Var &x, const Var &w, const Conv2dGeometry &geom,
                    int64_t out_h, int64_t out_w) {
  const Shape &xs = x.shape(), &ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[0])
    throw ShapeError("ConvTranspose2d: input " + ShapeString(xs) +
                     " incompatible with weight " + ShapeString(ws));
  const int64_t n = xs[0], cin = xs[1], cout = ws[1];
  ConvDims d{cout, out_h, out_w, ws[2], ws[3], xs[2], xs[3]};
  if (geom.OutH(out_h, d.kh) != d.oh || geom.OutW(out_w, d.kw) != d.ow)
    throw ShapeError("ConvTranspose2d: target (" + std::to_string(out_h) +
                     ", " + std::to_string(out_w) +
                     ") does not map onto input " + ShapeString(xs));
  const int64_t krows = cout * d.kh * d.kw, ispatial = d.oh * d.ow;
  const int64_t in_stride = cin * ispatial, out_stride = cout * out_h * out_w;
  Tensor out({n, cout, out_h, out_w});
  std::vector<double> cols(krows * ispatial);
  ConstMapMat W(w.value().data(), cin, krows);
  for (int64_t b = 0; b < n; ++b) {
    MapMat(cols.data(), krows, ispatial).noalias() =
        W.transpose() * ConstMapMat(x.value().data() + b * in_stride, cin, ispatial);
    Col2Im(cols.data(), d, geom, out.data() + b * out_stride);
  }
  Tensor xv = x.value(), wv = w.value();
  return TapeOf(x).Record(
      std::move(out), {x, w},
      [xv, wv, d, geom, n, cin, krows, ispatial, in_stride, out_stride](
          const Tensor &g, std::span<Tensor *const> gs) {
        std::vector<double> cols(krows * ispatial);
        ConstMapMat W(wv.data(), cin, krows);
        for (int64_t b = 0; b < n; ++b) {
          Im2Col(g.data() + b * out_stride, d, geom, cols.data());
          ConstMapMat C(cols.data(), krows, ispatial);
          if (gs[0])
            MapMat(gs[0]->data() + b * in_stride, cin, ispatial).noalias() += W * C;
          if (gs[1])
            MapMat(gs[1]->data(), cin, krows).noalias() +=
                ConstMapMat(xv.data() + b * in_stride, cin, ispatial) *
                C.transpose();
        }
      },
      "conv_transpose2d");
}

// ---------------------------------------------------------------------------
// Normalization

Var BatchNorm(const Var &x, const Var &gamma, const Var &beta,
              BatchNormState &state, bool training) {
  const Shape &s = x.shape();
  if (s.size() < 2 || gamma.shape() != Shape{s[1]} ||
      beta.shape() != Shape{s[1]})
    throw ShapeError("BatchNorm: affine parameters " +
                     ShapeString(gamma.shape()) + " do not match input " +
                     ShapeString(s));
  if (!state.running_mean || !state.running_var)
    throw std::logic_error("BatchNorm: running statistics not bound");
  int64_t outer, ch, inner;
  AxisExtents(s, 1, &outer, &ch, &inner);
  const int64_t m = outer * inner;
  const Tensor &xv = x.value(), &gv = gamma.value(), &bv = beta.value();
  std::vector<double> mean(ch), inv_std(ch);
  if (training) {
    for (int64_t c = 0; c < ch; ++c) {
      double sum = 0.0;
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) sum += xv[(o * ch + c) * inner + i];
      const double mu = sum / m;
      double sq = 0.0;
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          const double dlt = xv[(o * ch + c) * inner + i] - mu;
          sq += dlt * dlt;
        }
      const double var = sq / m;
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = m > 1 ? sq / (m - 1) : var;
      double &rm = state.running_mean->value[c];
      double &rv = state.running_var->value[c];
      rm = (1.0 - state.momentum) * rm + state.momentum * mu;
      rv = (1.0 - state.momentum) * rv + state.momentum * unbiased;
    }
  } else {
    for (int64_t c = 0; c < ch; ++c) {
      mean[c] = state.running_mean->value[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var->value[c] + state.eps);
    }
  }
  Tensor xhat(s), out(s);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t c = 0; c < ch; ++c)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t k = (o * ch + c) * inner + i;
        xhat[k] = (xv[k] - mean[c]) * inv_std[c];
        out[k] = gv[c] * xhat[k] + bv[c];
      }
  return TapeOf(x).Record(
      std::move(out), {x, gamma, beta},
      [xhat, gv, inv_std, outer, ch, inner, m, training](
          const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t c = 0; c < ch; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < inner; ++i) {
              const int64_t k = (o * ch + c) * inner + i;
              sum_g += g[k];
              sum_gx += g[k] * xhat[k];
            }
          if (gs[1]) (*gs[1])[c] += sum_gx;
          if (gs[2]) (*gs[2])[c] += sum_g;
          if (!gs[0]) continue;
          const double scale = gv[c] * inv_std[c];
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < inner; ++i) {
              const int64_t k = (o * ch + c) * inner + i;
              if (training)
                (*gs[0])[k] +=
                    scale * (g[k] - sum_g / m - xhat[k] * sum_gx / m);
              else
                (*gs[0])[k] += scale * g[k];
            }
        }
      },
      "batch_norm");
}

// ---------------------------------------------------------------------------
// Softmax family and losses

namespace {

Tensor LogSoftmaxValue(const Tensor &x) {
  const Shape &s = x.shape();
  int64_t outer, k, inner;
  AxisExtents(s, 1, &outer, &k, &inner);
  Tensor out(s);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double mx = -INFINITY;
      for (int64_t c = 0; c < k; ++c) mx = std::max(mx, x[(o * k + c) * inner + i]);
      double sum = 0.0;
      for (int64_t c = 0; c < k; ++c)
        sum += std::exp(x[(o * k + c) * inner + i] - mx);
      const double lse = mx + std::log(sum);
      for (int64_t c = 0; c < k; ++c)
        out[(o * k + c) * inner + i] = x[(o * k + c) * inner + i] - lse;
    }
  return out;
}

}  // namespace

Var LogSoftmax(const Var &x) {
  const Shape &s = x.shape();
  if (s.size() < 2) throw ShapeError("LogSoftmax: rank must be >= 2");
  Tensor out = LogSoftmaxValue(x.value());
  int64_t outer, k, inner;
  AxisExtents(s, 1, &outer, &k, &inner);
  Tensor y = out;
  return TapeOf(x).Record(
      std::move(out), {x},
      [y, outer, k, inner](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < inner; ++i) {
            double sum_g = 0.0;
            for (int64_t c = 0; c < k; ++c) sum_g += g[(o * k + c) * inner + i];
            for (int64_t c = 0; c < k; ++c) {
              const int64_t idx = (o * k + c) * inner + i;
              (*gs[0])[idx] += g[idx] - std::exp(y[idx]) * sum_g;
            }
          }
      },
      "log_softmax");
}

Var Softmax(const Var &x) {
  const Shape &s = x.shape();
  if (s.size() < 2) throw ShapeError("Softmax: rank must be >= 2");
  Tensor out = LogSoftmaxValue(x.value());
  for (double &v : out.values()) v = std::exp(v);
  int64_t outer, k, inner;
  AxisExtents(s, 1, &outer, &k, &inner);
  Tensor y = out;
  return TapeOf(x).Record(
      std::move(out), {x},
      [y, outer, k, inner](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < inner; ++i) {
            double dot = 0.0;
            for (int64_t c = 0; c < k; ++c) {
              const int64_t idx = (o * k + c) * inner + i;
              dot += g[idx] * y[idx];
            }
            for (int64_t c = 0; c < k; ++c) {
              const int64_t idx = (o * k + c) * inner + i;
              (*gs[0])[idx] += y[idx] * (g[idx] - dot);
            }
          }
      },
      "softmax");
}

Var NllLoss(const Var &log_probs, const std::vector<int> &labels) {
  const Shape &s = log_probs.shape();
  if (s.size() != 3)
    throw ShapeError("NllLoss: expected (N, K, T), got " + ShapeString(s));
  const int64_t n = s[0], k = s[1], t = s[2];
  if (static_cast<int64_t>(labels.size()) != n * t)
    throw ShapeError("NllLoss: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n * t) + " frames");
  for (int label : labels)
    if (label < 0 || label >= k)
      throw std::out_of_range("NllLoss: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(k) + ")");
  const Tensor &lp = log_probs.value();
  double total = 0.0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t f = 0; f < t; ++f)
      total -= lp[(b * k + labels[b * t + f]) * t + f];
  const double frames = static_cast<double>(n * t);
  return TapeOf(log_probs).Record(
      Tensor::Scalar(total / frames), {log_probs},
      [labels, n, k, t, frames](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t b = 0; b < n; ++b)
          for (int64_t f = 0; f < t; ++f)
            (*gs[0])[(b * k + labels[b * t + f]) * t + f] -= g[0] / frames;
      },
      "nll_loss");
}

Var MseLoss(const Var &a, const Tensor &target) {
  CheckSameShape(a.shape(), target.shape(), "MseLoss");
  const Tensor &x = a.value();
  const double n = static_cast<double>(x.numel());
  double total = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double d = x[i] - target[i];
    total += d * d;
  }
  return TapeOf(a).Record(
      Tensor::Scalar(total / n), {a},
      [x, target, n](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t i = 0; i < x.numel(); ++i)
          (*gs[0])[i] += 2.0 * (x[i] - target[i]) * g[0] / n;
      },
      "mse_loss");
}

Var Dropout(const Var &x, double p, bool training, std::mt19937_64 &rng) {
  if (!(p >= 0.0 && p < 1.0))
    throw std::invalid_argument("Dropout: p must lie in [0, 1), got " +
                                std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Tensor mask(x.shape());
  for (double &m : mask.values()) m = uni(rng) >= p ? keep_scale : 0.0;
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return TapeOf(x).Record(
      std::move(out), {x},
      [mask](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t i = 0; i < g.numel(); ++i) (*gs[0])[i] += g[i] * mask[i];
      },
      "dropout");
}

// ---------------------------------------------------------------------------
// Beamforming

Var BeamformPower(const Var &x, const Var &w_re, const Var &w_im) {
  const Shape &xs = x.shape(), &ws = w_re.shape();
  SameShape(w_re, w_im, "BeamformPower weights");
  if (xs.size() != 4 || ws.size() != 3 || xs[1] != 2 * ws[1] || xs[2] != ws[2])
    throw ShapeError("BeamformPower: input " + ShapeString(xs) +
                     " incompatible with weights " + ShapeString(ws));
  const int64_t n = xs[0], c = ws[1], f = xs[2], t = xs[3], d = ws[0];
  const Tensor &xv = x.value(), &wr = w_re.value(), &wi = w_im.value();
  // y = sum_c conj(w) x = sum_c (wr xr + wi xi) + j (wr xi - wi xr)
  Tensor yr({n, d, f, t}), yi({n, d, f, t}), out({n, d, f, t});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t dir = 0; dir < d; ++dir)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t k = 0; k < f; ++k) {
          const double a = wr[(dir * c + ch) * f + k];
          const double bb = wi[(dir * c + ch) * f + k];
          const double *xr = xv.data() + ((b * 2 * c + ch) * f + k) * t;
          const double *xi = xv.data() + ((b * 2 * c + c + ch) * f + k) * t;
          double *pr = yr.data() + ((b * d + dir) * f + k) * t;
          double *pi = yi.data() + ((b * d + dir) * f + k) * t;
          for (int64_t tt = 0; tt < t; ++tt) {
            pr[tt] += a * xr[tt] + bb * xi[tt];
            pi[tt] += a * xi[tt] - bb * xr[tt];
          }
        }
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = yr[i] * yr[i] + yi[i] * yi[i];
  Tensor wrv = wr, wiv = wi;
  return TapeOf(x).Record(
      std::move(out), {x, w_re, w_im},
      [xv, wrv, wiv, yr, yi, n, c, f, t, d](const Tensor &g,
                                            std::span<Tensor *const> gs) {
        for (int64_t b = 0; b < n; ++b)
          for (int64_t dir = 0; dir < d; ++dir)
            for (int64_t ch = 0; ch < c; ++ch)
              for (int64_t k = 0; k < f; ++k) {
                const int64_t widx = (dir * c + ch) * f + k;
                const double a = wrv[widx], bb = wiv[widx];
                const int64_t xr_off = ((b * 2 * c + ch) * f + k) * t;
                const int64_t xi_off = ((b * 2 * c + c + ch) * f + k) * t;
                const int64_t y_off = ((b * d + dir) * f + k) * t;
                double ga = 0.0, gb = 0.0;
                for (int64_t tt = 0; tt < t; ++tt) {
                  // dP/dyr = 2 yr, dP/dyi = 2 yi
                  const double gr = 2.0 * g[y_off + tt] * yr[y_off + tt];
                  const double gi = 2.0 * g[y_off + tt] * yi[y_off + tt];
                  const double xr = xv[xr_off + tt], xi = xv[xi_off + tt];
                  ga += gr * xr + gi * xi;
                  gb += gr * xi - gi * xr;
                  if (gs[0]) {
                    (*gs[0])[xr_off + tt] += gr * a - gi * bb;
                    (*gs[0])[xi_off + tt] += gr * bb + gi * a;
                  }
                }
                if (gs[1]) (*gs[1])[widx] += ga;
                if (gs[2]) (*gs[2])[widx] += gb;
              }
      },
      "beamform_power");
}

Var CombineDirections(const Var &feats, const Var &weights) {
  const Shape &fs = feats.shape(), &ws = weights.shape();
  if (fs.size() != 4 || ws.size() != 3 || fs[0] != ws[0] || fs[1] != ws[1] ||
      fs[3] != ws[2])
    throw ShapeError("CombineDirections: features " + ShapeString(fs) +
                     " incompatible with weights " + ShapeString(ws));
  const int64_t n = fs[0], d = fs[1], m = fs[2], t = fs[3];
  const Tensor &fv = feats.value(), &wv = weights.value();
  Tensor out({n, m, t});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t dir = 0; dir < d; ++dir)
      for (int64_t k = 0; k < m; ++k)
        for (int64_t tt = 0; tt < t; ++tt)
          out[(b * m + k) * t + tt] +=
              wv[(b * d + dir) * t + tt] * fv[((b * d + dir) * m + k) * t + tt];
  Tensor fcopy = fv, wcopy = wv;
  return TapeOf(feats).Record(
      std::move(out), {feats, weights},
      [fcopy, wcopy, n, d, m, t](const Tensor &g, std::span<Tensor *const> gs) {
        for (int64_t b = 0; b < n; ++b)
          for (int64_t dir = 0; dir < d; ++dir)
            for (int64_t k = 0; k < m; ++k)
              for (int64_t tt = 0; tt < t; ++tt) {
                const double go = g[(b * m + k) * t + tt];
                const int64_t fi = ((b * d + dir) * m + k) * t + tt;
                const int64_t wi = (b * d + dir) * t + tt;
                if (gs[0]) (*gs[0])[fi] += go * wcopy[wi];
                if (gs[1]) (*gs[1])[wi] += go * fcopy[fi];
              }
      },
      "combine_directions");
}

}  // namespace mcdc::ops
