#pragma once

// Differentiable tensor operations recorded on a Tape.
//
// Conventions: convolution is cross-correlation (no kernel flip); relu,
// clip and max-pool use subgradient 0 at their kinks; the only broadcast
// is a bias add over the channel (or output-feature) axis.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "edl/autodiff.hpp"

namespace edl::ops {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline void require_ndim(const Var& a, std::size_t n, const char* op) {
  if (a.value().ndim() != n) {
    throw DimensionError(std::string(op) + ": expected " + std::to_string(n) +
                         "-d input, got " + shape_string(a.shape()));
  }
}

// Elementwise op with derivative expressed through input x and output y.
template <typename F, typename DF>
Var unary(Var x, F f, DF df) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return x.tape->record(std::move(out), {x}, [df](Tape& t, std::size_t self) {
    const std::size_t xi = t.inputs(self)[0];
    if (!t.requires_grad(xi)) return;
    const Tensor& xv = t.value(xi);
    const Tensor& yv = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t in : t.inputs(self)) {
      if (!t.requires_grad(in)) continue;
      Tensor& gi = t.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const std::size_t ai = t.inputs(self)[0];
    const std::size_t bi = t.inputs(self)[1];
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ai)) {
      const Tensor& bv = t.value(bi);
      Tensor& ga = t.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      const Tensor& av = t.value(ai);
      Tensor& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var x, double s) {
  return detail::unary(
      x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

inline Var add_scalar(Var x, double c) {
  return detail::unary(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var relu(Var x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(Var x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

/// Natural log; non-positive inputs propagate NaN/-inf rather than throwing.
inline Var log(Var x) {
  return detail::unary(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

/// ln(1 + e^x) as max(x,0) + ln(1 + e^-|x|); derivative is the logistic
/// sigmoid.
inline Var softplus(Var x) {
  return detail::unary(
      x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

/// Clamp to [lo, hi]. Gradient is 1 strictly inside, 0 at or beyond the
/// bounds.
inline Var clip(Var x, double lo, double hi) {
  if (!(lo < hi)) {
    throw ArgumentError("clip: lo must be < hi (got " + std::to_string(lo) +
                        ", " + std::to_string(hi) + ")");
  }
  return detail::unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(Tensor::scalar(s), {x}, [](Tape& t, std::size_t self) {
    const std::size_t xi = t.inputs(self)[0];
    if (!t.requires_grad(xi)) return;
    const double g = t.grad(self)[0];
    for (double& v : t.grad(xi).data()) v += g;
  });
}

inline Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(Tensor::scalar(s / n), {x}, [n](Tape& t, std::size_t self) {
    const std::size_t xi = t.inputs(self)[0];
    if (!t.requires_grad(xi)) return;
    const double g = t.grad(self)[0] / n;
    for (double& v : t.grad(xi).data()) v += g;
  });
}

inline Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [](Tape& t, std::size_t self) {
    const std::size_t xi = t.inputs(self)[0];
    if (!t.requires_grad(xi)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// N×(rest...) -> N×prod(rest).
inline Var flatten(Var x) {
  const Shape& s = x.shape();
  return reshape(x, {s[0], x.value().size() / s[0]});
}

inline Var matmul(Var a, Var b) {
  detail::require_ndim(a, 2, "matmul");
  detail::require_ndim(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ " +
                         shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  detail::MatMap(out.raw(), m, n).noalias() =
      detail::ConstMatMap(a.value().raw(), m, k) *
      detail::ConstMatMap(b.value().raw(), k, n);
  return a.tape->record(std::move(out), {a, b}, [m, k, n](Tape& t, std::size_t self) {
    const std::size_t ai = t.inputs(self)[0];
    const std::size_t bi = t.inputs(self)[1];
    detail::ConstMatMap g(t.grad(self).raw(), m, n);
    if (t.requires_grad(ai)) {
      detail::MatMap(t.grad(ai).raw(), m, k).noalias() +=
          g * detail::ConstMatMap(t.value(bi).raw(), k, n).transpose();
    }
    if (t.requires_grad(bi)) {
      detail::MatMap(t.grad(bi).raw(), k, n).noalias() +=
          detail::ConstMatMap(t.value(ai).raw(), m, k).transpose() * g;
    }
  });
}

/// x[N×D]·W[D×H] + b[H].
inline Var dense(Var x, Var w, Var b) {
  detail::require_ndim(b, 1, "dense");
  Var y = matmul(x, w);
  const std::size_t n = y.shape()[0], h = y.shape()[1];
  if (b.shape()[0] != h) {
    throw DimensionError("dense: bias " + shape_string(b.shape()) +
                         " does not match " + std::to_string(h) + " outputs");
  }
  Tensor out = y.value();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < h; ++c) out[r * h + c] += b.value()[c];
  return x.tape->record(std::move(out), {y, b}, [n, h](Tape& t, std::size_t self) {
    const std::size_t yi = t.inputs(self)[0];
    const std::size_t bi = t.inputs(self)[1];
    const Tensor& g = t.grad(self);
    if (t.requires_grad(yi)) {
      Tensor& gy = t.grad(yi);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad(bi);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < h; ++c) gb[c] += g[r * h + c];
    }
  });
}

namespace detail {

struct ConvGeometry {
  std::size_t n, c, h, w;     // input
  std::size_t f, kh, kw;      // kernel
  std::size_t stride, pad;
  std::size_t oh, ow;         // output

  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

// col[(ci*kh + i)*kw + j][oy*ow + ox] = x[ci][oy*s + i - p][ox*s + j - p]
inline void im2col(const ConvGeometry& g, const double* x, double* col) {
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((ci * g.kh + i) * g.kw + j) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
}

inline void col2im_add(const ConvGeometry& g, const double* col, double* x) {
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((ci * g.kh + i) * g.kw + j) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-d cross-correlation of input[N×C×H×W] with kernel[F×C×kh×kw] plus a
/// per-filter bias[F].
inline Var conv2d(Var input, Var kernel, Var bias, std::size_t stride = 1,
                  std::size_t padding = 0) {
  detail::require_ndim(input, 4, "conv2d");
  detail::require_ndim(kernel, 4, "conv2d");
  detail::require_ndim(bias, 1, "conv2d");
  if (stride == 0) throw ArgumentError("conv2d: stride must be positive");
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (ks[1] != is[1]) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(ks[1]) +
                         " channels, input has " + std::to_string(is[1]));
  }
  if (bias.shape()[0] != ks[0]) {
    throw DimensionError("conv2d: bias length differs from filter count");
  }
  const long span_h = static_cast<long>(is[2] + 2 * padding) - static_cast<long>(ks[2]);
  const long span_w = static_cast<long>(is[3] + 2 * padding) - static_cast<long>(ks[3]);
  if (span_h < 0 || span_w < 0) {
    throw DimensionError("conv2d: kernel " + shape_string(ks) +
                         " larger than padded input " + shape_string(is));
  }
  detail::ConvGeometry g{is[0], is[1], is[2], is[3], ks[0], ks[2], ks[3], stride, padding,
                         static_cast<std::size_t>(span_h) / stride + 1,
                         static_cast<std::size_t>(span_w) / stride + 1};

  Tensor out({g.n, g.f, g.oh, g.ow});
  std::vector<double> col(g.patch() * g.pixels());
  detail::ConstMatMap k(kernel.value().raw(), g.f, g.patch());
  for (std::size_t s = 0; s < g.n; ++s) {
    detail::im2col(g, input.value().raw() + s * g.c * g.h * g.w, col.data());
    detail::MatMap o(out.raw() + s * g.f * g.pixels(), g.f, g.pixels());
    o.noalias() = k * detail::ConstMatMap(col.data(), g.patch(), g.pixels());
    for (std::size_t f = 0; f < g.f; ++f) o.row(f).array() += bias.value()[f];
  }

  return input.tape->record(
      std::move(out), {input, kernel, bias}, [g](Tape& t, std::size_t self) {
        const std::size_t xi = t.inputs(self)[0];
        const std::size_t ki = t.inputs(self)[1];
        const std::size_t bi = t.inputs(self)[2];
        const Tensor& grad = t.grad(self);
        const bool need_x = t.requires_grad(xi);
        const bool need_k = t.requires_grad(ki);
        std::vector<double> col(g.patch() * g.pixels());
        detail::ConstMatMap k(t.value(ki).raw(), g.f, g.patch());
        for (std::size_t s = 0; s < g.n; ++s) {
          detail::ConstMatMap go(grad.raw() + s * g.f * g.pixels(), g.f, g.pixels());
          if (need_k) {
            detail::im2col(g, t.value(xi).raw() + s * g.c * g.h * g.w, col.data());
            detail::MatMap(t.grad(ki).raw(), g.f, g.patch()).noalias() +=
                go * detail::ConstMatMap(col.data(), g.patch(), g.pixels()).transpose();
          }
          if (need_x) {
            detail::MatMap(col.data(), g.patch(), g.pixels()).noalias() =
                k.transpose() * go;
            detail::col2im_add(g, col.data(), t.grad(xi).raw() + s * g.c * g.h * g.w);
          }
        }
        if (t.requires_grad(bi)) {
          Tensor& gb = t.grad(bi);
          for (std::size_t s = 0; s < g.n; ++s)
            for (std::size_t f = 0; f < g.f; ++f) {
              const double* row = grad.raw() + (s * g.f + f) * g.pixels();
              double acc = 0.0;
              for (std::size_t p = 0; p < g.pixels(); ++p) acc += row[p];
              gb[f] += acc;
            }
        }
      });
}

/// Non-overlapping-or-strided max pooling over H and W. Ties route the
/// gradient to the first maximal element in row-major window order.
inline Var max_pool2d(Var x, std::size_t size = 2, std::size_t stride = 2) {
  detail::require_ndim(x, 4, "max_pool2d");
  if (size == 0 || stride == 0) throw ArgumentError("max_pool2d: size and stride must be positive");
  const Shape& s = x.shape();
  if (s[2] < size || s[3] < size) {
    throw DimensionError("max_pool2d: window larger than input " + shape_string(s));
  }
  const std::size_t oh = (s[2] - size) / stride + 1;
  const std::size_t ow = (s[3] - size) / stride + 1;
  Tensor out({s[0], s[1], oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const Tensor& in = x.value();
  for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc) {
    const double* plane = in.raw() + nc * s[2] * s[3];
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * stride) * s[3] + ox * stride;
        for (std::size_t i = 0; i < size; ++i)
          for (std::size_t j = 0; j < size; ++j) {
            const std::size_t idx = (oy * stride + i) * s[3] + ox * stride + j;
            if (plane[idx] > plane[best]) best = idx;
          }
        const std::size_t o = (nc * oh + oy) * ow + ox;
        out[o] = plane[best];
        argmax[o] = nc * s[2] * s[3] + best;
      }
  }
  return x.tape->record(std::move(out), {x},
                        [argmax = std::move(argmax)](Tape& t, std::size_t self) {
                          const std::size_t xi = t.inputs(self)[0];
                          if (!t.requires_grad(xi)) return;
                          const Tensor& g = t.grad(self);
                          Tensor& gx = t.grad(xi);
                          for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
                        });
}

/// N×C×H×W -> N×C mean over the spatial axes.
inline Var global_avg_pool(Var x) {
  detail::require_ndim(x, 4, "global_avg_pool");
  const Shape& s = x.shape();
  const std::size_t plane = s[2] * s[3];
  Tensor out({s[0], s[1]});
  for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += x.value()[nc * plane + p];
    out[nc] = acc / static_cast<double>(plane);
  }
  return x.tape->record(std::move(out), {x}, [plane](Tape& t, std::size_t self) {
    const std::size_t xi = t.inputs(self)[0];
    if (!t.requires_grad(xi)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(xi);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t nc = 0; nc < g.size(); ++nc)
      for (std::size_t p = 0; p < plane; ++p) gx[nc * plane + p] += g[nc] * inv;
  });
}

}  // namespace edl::ops
