#include "ccgan/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace ccgan {

namespace {

template <typename T>
using Impl = detail::TensorImpl<T>;

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
std::vector<T>& grad_buf(Impl<T>* p) {
  if (p->grad.empty()) p->grad.assign(p->data.size(), T(0));
  return p->grad;
}

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value in output");
}

void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) throw ShapeError(std::string(op) + ": " + msg);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* name) {
  require(t.defined(), op, std::string(name) + " is undefined");
  require(t.rank() == rank, op,
          std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
              shape_str(t.shape()));
}

struct ConvGeom {
  std::size_t n, c, h, w;   // image side
  std::size_t kh, kw, stride, pad;
  std::size_t oh, ow;       // window positions
};

// cols: [c*kh*kw, n*oh*ow] row-major.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t p = g.oh * g.ow;
  const std::size_t ld = g.n * p;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ld;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* img = x + (n * g.c + c) * g.h * g.w;
          T* dst = row + n * p;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                            static_cast<std::ptrdiff_t>(g.pad);
            T* drow = dst + oy * g.ow;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(drow, drow + g.ow, T(0));
              continue;
            }
            const T* srow = img + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                              static_cast<std::ptrdiff_t>(g.pad);
              drow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                             ? T(0)
                             : srow[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into the image.
template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const std::size_t p = g.oh * g.ow;
  const std::size_t ld = g.n * p;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ld;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* img = x + (n * g.c + c) * g.h * g.w;
          const T* src = row + n * p;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            T* drow = img + static_cast<std::size_t>(iy) * g.w;
            const T* srow = src + oy * g.ow;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                              static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              drow[static_cast<std::size_t>(ix)] += srow[ox];
            }
          }
        }
      }
    }
  }
}

// NCHW -> [C, N*P] and back.
template <typename T>
void nchw_to_cm(const T* x, std::size_t n, std::size_t c, std::size_t p, T* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      std::copy_n(x + (i * c + j) * p, p, out + j * n * p + i * p);
}

template <typename T>
void cm_to_nchw_add(const T* m, std::size_t n, std::size_t c, std::size_t p, T* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T* src = m + j * n * p + i * p;
      T* dst = out + (i * c + j) * p;
      for (std::size_t k = 0; k < p; ++k) dst[k] += src[k];
    }
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const Tensor<T>& x, const char* op, Fwd fwd, Bwd dfdx) {
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) os[i] = fwd(xs[i]);
  ensure_finite(out, op);
  if (should_record<T>({&x})) {
    auto* xi = x.impl();
    auto* oi = out.impl();
    current_tape<T>()->record(op, {x.impl_ptr()}, out.impl_ptr(), [xi, oi, dfdx] {
      if (!xi->active) return;
      auto& g = grad_buf(xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * dfdx(xi->data[i], oi->data[i]);
    });
  }
  return out;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.defined() && b.defined(), op, "undefined operand");
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

// --------------------------------------------------------------------------
// Convolutions

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  constexpr const char* op = "conv2d";
  require_rank(input, 4, op, "input");
  require_rank(kernel, 4, op, "kernel");
  require(stride >= 1, op, "stride must be >= 1");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  require(kernel.dim(1) == cin, op,
          "kernel expects " + std::to_string(kernel.dim(1)) + " input channels, input has " +
              std::to_string(cin));
  require(kh <= h + 2 * pad && kw <= w + 2 * pad, op,
          "kernel " + shape_str(kernel.shape()) + " larger than padded input " +
              shape_str(input.shape()));
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == cout, op,
            "bias must be [" + std::to_string(cout) + "], got " + shape_str(bias.shape()));
  }
  const ConvGeom g{n, cin, h, w, kh, kw, stride, pad, (h + 2 * pad - kh) / stride + 1,
                   (w + 2 * pad - kw) / stride + 1};
  const std::size_t k = cin * kh * kw;
  const std::size_t p = g.oh * g.ow;

  std::vector<T> cols(k * n * p);
  im2col(input.data().data(), g, cols.data());
  MatR<T> prod = CMapR<T>(kernel.data().data(), cout, k) * CMapR<T>(cols.data(), k, n * p);

  Tensor<T> out(Shape{n, cout, g.oh, g.ow});
  auto os = out.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < cout; ++c) {
      const T b = bias.defined() ? bias[c] : T(0);
      const T* src = prod.data() + c * n * p + i * p;
      T* dst = os.data() + (i * cout + c) * p;
      for (std::size_t j = 0; j < p; ++j) dst[j] = src[j] + b;
    }
  ensure_finite(out, op);

  if (should_record<T>({&input, &kernel, &bias})) {
    auto* xi = input.impl();
    auto* wi = kernel.impl();
    auto* bi = bias.defined() ? bias.impl() : nullptr;
    auto* oi = out.impl();
    std::vector<typename Tape<T>::ImplPtr> ins{input.impl_ptr(), kernel.impl_ptr()};
    if (bi) ins.push_back(bias.impl_ptr());
    current_tape<T>()->record(op, std::move(ins), out.impl_ptr(), [=] {
      MatR<T> gm(cout, n * p);
      gm.setZero();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < cout; ++c)
          std::copy_n(oi->grad.data() + (i * cout + c) * p, p, gm.data() + c * n * p + i * p);
      if (bi && bi->active) {
        auto& gb = grad_buf(bi);
        for (std::size_t c = 0; c < cout; ++c) {
          T s = 0;
          const T* row = gm.data() + c * n * p;
          for (std::size_t j = 0; j < n * p; ++j) s += row[j];
          gb[c] += s;
        }
      }
      if (wi->active) {
        std::vector<T> cols2(k * n * p);
        im2col(xi->data.data(), g, cols2.data());
        MapR<T>(grad_buf(wi).data(), cout, k).noalias() +=
            gm * CMapR<T>(cols2.data(), k, n * p).transpose();
      }
      if (xi->active) {
        MatR<T> dcols = CMapR<T>(wi->data.data(), cout, k).transpose() * gm;
        col2im(dcols.data(), g, grad_buf(xi).data());
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad, std::size_t output_padding) {
  constexpr const char* op = "conv_transpose2d";
  require_rank(input, 4, op, "input");
  require_rank(kernel, 4, op, "kernel");
  require(stride >= 1, op, "stride must be >= 1");
  require(output_padding < stride, op, "output_padding must be < stride");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  require(kernel.dim(0) == cin, op,
          "kernel expects " + std::to_string(kernel.dim(0)) + " input channels, input has " +
              std::to_string(cin));
  require((h - 1) * stride + kh + output_padding > 2 * pad &&
              (w - 1) * stride + kw + output_padding > 2 * pad,
          op, "padding too large for input " + shape_str(input.shape()));
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == cout, op,
            "bias must be [" + std::to_string(cout) + "], got " + shape_str(bias.shape()));
  }
  const std::size_t oh = (h - 1) * stride + kh + output_padding - 2 * pad;
  const std::size_t ow = (w - 1) * stride + kw + output_padding - 2 * pad;
  // Geometry of the equivalent forward convolution on the output image.
  const ConvGeom g{n, cout, oh, ow, kh, kw, stride, pad, h, w};
  const std::size_t k = cout * kh * kw;
  const std::size_t p = h * w;

  std::vector<T> xm(cin * n * p);
  nchw_to_cm(input.data().data(), n, cin, p, xm.data());
  MatR<T> cols =
      CMapR<T>(kernel.data().data(), cin, k).transpose() * CMapR<T>(xm.data(), cin, n * p);
  Tensor<T> out(Shape{n, cout, oh, ow});
  auto os = out.data();
  col2im(cols.data(), g, os.data());
  if (bias.defined()) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cout; ++c) {
        T* dst = os.data() + (i * cout + c) * oh * ow;
        for (std::size_t j = 0; j < oh * ow; ++j) dst[j] += bias[c];
      }
  }
  ensure_finite(out, op);

  if (should_record<T>({&input, &kernel, &bias})) {
    auto* xi = input.impl();
    auto* wi = kernel.impl();
    auto* bi = bias.defined() ? bias.impl() : nullptr;
    auto* oi = out.impl();
    std::vector<typename Tape<T>::ImplPtr> ins{input.impl_ptr(), kernel.impl_ptr()};
    if (bi) ins.push_back(bias.impl_ptr());
    current_tape<T>()->record(op, std::move(ins), out.impl_ptr(), [=] {
      if (bi && bi->active) {
        auto& gb = grad_buf(bi);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < cout; ++c) {
            const T* src = oi->grad.data() + (i * cout + c) * oh * ow;
            T s = 0;
            for (std::size_t j = 0; j < oh * ow; ++j) s += src[j];
            gb[c] += s;
          }
      }
      if (!wi->active && !xi->active) return;
      std::vector<T> dcols(k * n * p);
      im2col(oi->grad.data(), g, dcols.data());
      auto dc = CMapR<T>(dcols.data(), k, n * p);
      if (wi->active) {
        std::vector<T> xm2(cin * n * p);
        nchw_to_cm(xi->data.data(), n, cin, p, xm2.data());
        MapR<T>(grad_buf(wi).data(), cin, k).noalias() +=
            CMapR<T>(xm2.data(), cin, n * p) * dc.transpose();
      }
      if (xi->active) {
        MatR<T> dx = CMapR<T>(wi->data.data(), cin, k) * dc;
        cm_to_nchw_add(dx.data(), n, cin, p, grad_buf(xi).data());
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// Pointwise

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary(
      x, "leaky_relu", [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary(
      x, "add_scalar", [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, T lo, T hi) {
  return unary(
      x, "log_clamped", [lo, hi](T v) { return std::log(std::clamp(v, lo, hi)); },
      [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1) / v; });
}

template <typename T>
Tensor<T> log1m_clamped(const Tensor<T>& x, T lo, T hi) {
  return unary(
      x, "log1m_clamped", [lo, hi](T v) { return std::log(T(1) - std::clamp(v, lo, hi)); },
      [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(-1) / (T(1) - v); });
}

namespace {

template <typename T, typename Fwd, typename Da, typename Db>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, Da da, Db db) {
  require_same_shape(a, b, op);
  Tensor<T> out(a.shape());
  auto as = a.data();
  auto bs = b.data();
  auto os = out.data();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] = fwd(as[i], bs[i]);
  ensure_finite(out, op);
  if (should_record<T>({&a, &b})) {
    auto* ai = a.impl();
    auto* bi = b.impl();
    auto* oi = out.impl();
    current_tape<T>()->record(op, {a.impl_ptr(), b.impl_ptr()}, out.impl_ptr(), [=] {
      // a and b may alias; accumulate through the buffers one after the other.
      if (ai->active) {
        auto& g = grad_buf(ai);
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += oi->grad[i] * da(ai->data[i], bi->data[i]);
      }
      if (bi->active) {
        auto& g = grad_buf(bi);
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += oi->grad[i] * db(ai->data[i], bi->data[i]);
      }
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

// --------------------------------------------------------------------------
// Normalisation and reductions

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
  constexpr const char* op = "instance_norm";
  require_rank(x, 4, op, "input");
  const std::size_t nc = x.dim(0) * x.dim(1);
  const std::size_t p = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  std::vector<T> inv_std(nc);
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t m = 0; m < nc; ++m) {
    const T* src = xs.data() + m * p;
    T mu = 0;
    for (std::size_t j = 0; j < p; ++j) mu += src[j];
    mu /= static_cast<T>(p);
    T var = 0;
    for (std::size_t j = 0; j < p; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<T>(p);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[m] = is;
    T* dst = os.data() + m * p;
    for (std::size_t j = 0; j < p; ++j) dst[j] = (src[j] - mu) * is;
  }
  ensure_finite(out, op);
  if (should_record<T>({&x})) {
    auto* xi = x.impl();
    auto* oi = out.impl();
    current_tape<T>()->record(op, {x.impl_ptr()}, out.impl_ptr(),
                              [xi, oi, nc, p, inv_std = std::move(inv_std)] {
                                if (!xi->active) return;
                                auto& g = grad_buf(xi);
                                for (std::size_t m = 0; m < nc; ++m) {
                                  const T* dy = oi->grad.data() + m * p;
                                  const T* y = oi->data.data() + m * p;
                                  T mdy = 0, mdyy = 0;
                                  for (std::size_t j = 0; j < p; ++j) {
                                    mdy += dy[j];
                                    mdyy += dy[j] * y[j];
                                  }
                                  mdy /= static_cast<T>(p);
                                  mdyy /= static_cast<T>(p);
                                  T* dx = g.data() + m * p;
                                  for (std::size_t j = 0; j < p; ++j)
                                    dx[j] += inv_std[m] * (dy[j] - mdy - y[j] * mdyy);
                                }
                              });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  ensure_finite(out, "sum");
  if (should_record<T>({&x})) {
    auto* xi = x.impl();
    auto* oi = out.impl();
    current_tape<T>()->record("sum", {x.impl_ptr()}, out.impl_ptr(), [xi, oi] {
      if (!xi->active) return;
      for (auto& g : grad_buf(xi)) g += oi->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.numel());
  T s = 0;
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s * inv);
  ensure_finite(out, "mean");
  if (should_record<T>({&x})) {
    auto* xi = x.impl();
    auto* oi = out.impl();
    current_tape<T>()->record("mean", {x.impl_ptr()}, out.impl_ptr(), [xi, oi, inv] {
      if (!xi->active) return;
      const T g0 = oi->grad[0] * inv;
      for (auto& g : grad_buf(xi)) g += g0;
    });
  }
  return out;
}

template <typename T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b) {
  constexpr const char* op = "l1_distance";
  require_same_shape(a, b, op);
  const T inv = T(1) / static_cast<T>(a.numel());
  T s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
  Tensor<T> out = Tensor<T>::scalar(s * inv);
  ensure_finite(out, op);
  if (should_record<T>({&a, &b})) {
    auto* ai = a.impl();
    auto* bi = b.impl();
    auto* oi = out.impl();
    current_tape<T>()->record(op, {a.impl_ptr(), b.impl_ptr()}, out.impl_ptr(), [=] {
      const T g0 = oi->grad[0] * inv;
      auto sign = [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); };
      if (ai->active) {
        auto& g = grad_buf(ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * sign(ai->data[i] - bi->data[i]);
      }
      if (bi->active) {
        auto& g = grad_buf(bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= g0 * sign(ai->data[i] - bi->data[i]);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
  constexpr const char* op = "spatial_mean";
  require_rank(x, 4, op, "input");
  const std::size_t n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  const T inv = T(1) / static_cast<T>(p);
  Tensor<T> out(Shape{n, c});
  for (std::size_t m = 0; m < n * c; ++m) {
    T s = 0;
    for (std::size_t j = 0; j < p; ++j) s += x[m * p + j];
    out[m] = s * inv;
  }
  ensure_finite(out, op);
  if (should_record<T>({&x})) {
    auto* xi = x.impl();
    auto* oi = out.impl();
    current_tape<T>()->record(op, {x.impl_ptr()}, out.impl_ptr(), [=] {
      if (!xi->active) return;
      auto& g = grad_buf(xi);
      for (std::size_t m = 0; m < n * c; ++m) {
        const T gm = oi->grad[m] * inv;
        for (std::size_t j = 0; j < p; ++j) g[m * p + j] += gm;
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// Resampling

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k) {
  constexpr const char* op = "avg_pool2d";
  require_rank(x, 4, op, "input");
  require(k >= 1 && x.dim(2) % k == 0 && x.dim(3) % k == 0, op,
          "pool size " + std::to_string(k) + " must divide spatial extent of " +
              shape_str(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / k, ow = w / k;
  const T inv = T(1) / static_cast<T>(k * k);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
  for (std::size_t m = 0; m < nc; ++m)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T s = 0;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) s += x[(m * h + oy * k + i) * w + ox * k + j];
        out[(m * oh + oy) * ow + ox] = s * inv;
      }
  ensure_finite(out, op);
  if (should_record<T>({&x})) {
    auto* xi = x.impl();
    auto* oi = out.impl();
    current_tape<T>()->record(op, {x.impl_ptr()}, out.impl_ptr(), [=] {
      if (!xi->active) return;
      auto& g = grad_buf(xi);
      for (std::size_t m = 0; m < nc; ++m)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const T go = oi->grad[(m * oh + oy) * ow + ox] * inv;
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) g[(m * h + oy * k + i) * w + ox * k + j] += go;
          }
    });
  }
  return out;
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  constexpr const char* op = "resize_nearest";
  require_rank(x, 4, op, "input");
  require(out_h >= 1 && out_w >= 1, op, "output extent must be positive");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<std::size_t> src(out_h * out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox)
      src[oy * out_w + ox] = std::min(oy * h / out_h, h - 1) * w + std::min(ox * w / out_w, w - 1);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), out_h, out_w});
  const std::size_t p = out_h * out_w;
  for (std::size_t m = 0; m < nc; ++m)
    for (std::size_t j = 0; j < p; ++j) out[m * p + j] = x[m * h * w + src[j]];
  if (should_record<T>({&x})) {
    auto* xi = x.impl();
    auto* oi = out.impl();
    current_tape<T>()->record(op, {x.impl_ptr()}, out.impl_ptr(),
                              [xi, oi, nc, p, hw = h * w, src = std::move(src)] {
                                if (!xi->active) return;
                                auto& g = grad_buf(xi);
                                for (std::size_t m = 0; m < nc; ++m)
                                  for (std::size_t j = 0; j < p; ++j)
                                    g[m * hw + src[j]] += oi->grad[m * p + j];
                              });
  }
  return out;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    auto i0 = static_cast<std::size_t>(s);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = Tap{i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  constexpr const char* op = "resize_bilinear";
  require_rank(x, 4, op, "input");
  require(out_h >= 1 && out_w >= 1, op, "output extent must be positive");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), out_h, out_w});
  for (std::size_t m = 0; m < nc; ++m) {
    const T* img = x.data().data() + m * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      const T wy = static_cast<T>(a.w1);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const T wx = static_cast<T>(b.w1);
        const T top = img[a.i0 * w + b.i0] * (T(1) - wx) + img[a.i0 * w + b.i1] * wx;
        const T bot = img[a.i1 * w + b.i0] * (T(1) - wx) + img[a.i1 * w + b.i1] * wx;
        out[(m * out_h + oy) * out_w + ox] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  ensure_finite(out, op);
  if (should_record<T>({&x})) {
    auto* xi = x.impl();
    auto* oi = out.impl();
    current_tape<T>()->record(
        op, {x.impl_ptr()}, out.impl_ptr(),
        [xi, oi, nc, h, w, out_h, out_w, ty = std::move(ty), tx = std::move(tx)] {
          if (!xi->active) return;
          auto& g = grad_buf(xi);
          for (std::size_t m = 0; m < nc; ++m) {
            T* img = g.data() + m * h * w;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
              const T wy = static_cast<T>(ty[oy].w1);
              for (std::size_t ox = 0; ox < out_w; ++ox) {
                const T wx = static_cast<T>(tx[ox].w1);
                const T go = oi->grad[(m * out_h + oy) * out_w + ox];
                img[ty[oy].i0 * w + tx[ox].i0] += go * (T(1) - wy) * (T(1) - wx);
                img[ty[oy].i0 * w + tx[ox].i1] += go * (T(1) - wy) * wx;
                img[ty[oy].i1 * w + tx[ox].i0] += go * wy * (T(1) - wx);
                img[ty[oy].i1 * w + tx[ox].i1] += go * wy * wx;
              }
            }
          }
        });
  }
  return out;
}

// --------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  constexpr const char* op = "concat_channels";
  require_rank(a, 4, op, "a");
  require_rank(b, 4, op, "b");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3), op,
          "batch/spatial mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), p = a.dim(2) * a.dim(3);
  Tensor<T> out(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * ca * p, ca * p, out.data().data() + i * (ca + cb) * p);
    std::copy_n(b.data().data() + i * cb * p, cb * p,
                out.data().data() + (i * (ca + cb) + ca) * p);
  }
  if (should_record<T>({&a, &b})) {
    auto* ai = a.impl();
    auto* bi = b.impl();
    auto* oi = out.impl();
    current_tape<T>()->record(op, {a.impl_ptr(), b.impl_ptr()}, out.impl_ptr(), [=] {
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = oi->grad.data() + i * (ca + cb) * p;
        if (ai->active) {
          T* dst = grad_buf(ai).data() + i * ca * p;
          for (std::size_t j = 0; j < ca * p; ++j) dst[j] += src[j];
        }
        if (bi->active) {
          T* dst = grad_buf(bi).data() + i * cb * p;
          for (std::size_t j = 0; j < cb * p; ++j) dst[j] += src[ca * p + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> replicate_condition(const Tensor<T>& z, std::size_t h, std::size_t w) {
  constexpr const char* op = "replicate_condition";
  require_rank(z, 2, op, "condition");
  require(z.dim(1) >= 1, op, "condition dimension must be >= 1");
  require(h >= 1 && w >= 1, op, "spatial extent must be positive");
  const std::size_t n = z.dim(0), d = z.dim(1), p = h * w;
  Tensor<T> out(Shape{n, d, h, w});
  for (std::size_t m = 0; m < n * d; ++m)
    std::fill_n(out.data().data() + m * p, p, z[m]);
  if (should_record<T>({&z})) {
    auto* zi = z.impl();
    auto* oi = out.impl();
    current_tape<T>()->record(op, {z.impl_ptr()}, out.impl_ptr(), [=] {
      if (!zi->active) return;
      auto& g = grad_buf(zi);
      for (std::size_t m = 0; m < n * d; ++m) {
        T s = 0;
        for (std::size_t j = 0; j < p; ++j) s += oi->grad[m * p + j];
        g[m] += s;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Tensor<T> out = x.reshaped(std::move(shape));
  if (should_record<T>({&x})) {
    auto* xi = x.impl();
    auto* oi = out.impl();
    current_tape<T>()->record("reshape", {x.impl_ptr()}, out.impl_ptr(), [xi, oi] {
      if (!xi->active) return;
      auto& g = grad_buf(xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  constexpr const char* op = "linear";
  require_rank(x, 2, op, "input");
  require_rank(weight, 2, op, "weight");
  const std::size_t n = x.dim(0), k = x.dim(1), m = weight.dim(0);
  require(weight.dim(1) == k, op,
          "weight " + shape_str(weight.shape()) + " incompatible with input " +
              shape_str(x.shape()));
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == m, op, "bias must be [" + std::to_string(m) + "]");
  }
  Tensor<T> out(Shape{n, m});
  auto om = MapR<T>(out.data().data(), n, m);
  om.noalias() = CMapR<T>(x.data().data(), n, k) * CMapR<T>(weight.data().data(), m, k).transpose();
  if (bias.defined())
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) om(i, j) += bias[j];
  ensure_finite(out, op);
  if (should_record<T>({&x, &weight, &bias})) {
    auto* xi = x.impl();
    auto* wi = weight.impl();
    auto* bi = bias.defined() ? bias.impl() : nullptr;
    auto* oi = out.impl();
    std::vector<typename Tape<T>::ImplPtr> ins{x.impl_ptr(), weight.impl_ptr()};
    if (bi) ins.push_back(bias.impl_ptr());
    current_tape<T>()->record(op, std::move(ins), out.impl_ptr(), [=] {
      auto go = CMapR<T>(oi->grad.data(), n, m);
      if (xi->active)
        MapR<T>(grad_buf(xi).data(), n, k).noalias() += go * CMapR<T>(wi->data.data(), m, k);
      if (wi->active)
        MapR<T>(grad_buf(wi).data(), m, k).noalias() +=
            go.transpose() * CMapR<T>(xi->data.data(), n, k);
      if (bi && bi->active) {
        auto& gb = grad_buf(bi);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[j] += go(i, j);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  constexpr const char* op = "softmax_cross_entropy";
  require_rank(logits, 2, op, "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  require(labels.size() == n, op,
          "expected " + std::to_string(n) + " labels, got " + std::to_string(labels.size()));
  std::vector<T> probs(n * k);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    require(label >= 0 && static_cast<std::size_t>(label) < k, op,
            "label " + std::to_string(label) + " out of range");
    const T* row = logits.data().data() + i * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - mx) / z;
    loss += std::log(z) + mx - row[label];
  }
  Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(n));
  ensure_finite(out, op);
  if (should_record<T>({&logits})) {
    auto* li = logits.impl();
    auto* oi = out.impl();
    std::vector<int> lab(labels.begin(), labels.end());
    current_tape<T>()->record(
        op, {logits.impl_ptr()}, out.impl_ptr(),
        [li, oi, n, k, probs = std::move(probs), lab = std::move(lab)] {
          if (!li->active) return;
          auto& g = grad_buf(li);
          const T g0 = oi->grad[0] / static_cast<T>(n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j)
              g[i * k + j] += g0 * (probs[i * k + j] - (static_cast<int>(j) == lab[i] ? T(1) : T(0)));
        });
  }
  return out;
}

#define CCGAN_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,  \
                            std::size_t);                                                        \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                      std::size_t, std::size_t, std::size_t);                    \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                            \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> tanh(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> instance_norm(const Tensor<T>&, T);                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> l1_distance(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> resize_nearest(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> resize_bilinear(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);              \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> replicate_condition(const Tensor<T>&, std::size_t, std::size_t);            \
  template Tensor<T> spatial_mean(const Tensor<T>&);                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> log_clamped(const Tensor<T>&, T, T);                                        \
  template Tensor<T> log1m_clamped(const Tensor<T>&, T, T);

CCGAN_INSTANTIATE_OPS(float)
CCGAN_INSTANTIATE_OPS(double)

#undef CCGAN_INSTANTIATE_OPS

}  // namespace ccgan
