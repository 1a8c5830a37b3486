#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "swtr/tensor.hpp"

namespace swtr {

namespace detail {
inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    fail(ErrorCode::kDimension,
         std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] + b.vec()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](Node<T>& self) {
    for (Tensor<T> t : {a, b})
      if (t.requires_grad())
        for (std::size_t i = 0; i < self.grad.size(); ++i) t.grad()[i] += self.grad[i];
  }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] - b.vec()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](Node<T>& self) {
    Tensor<T> ga = a, gb = b;
    if (ga.requires_grad())
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga.grad()[i] += self.grad[i];
    if (gb.requires_grad())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb.grad()[i] -= self.grad[i];
  }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] * b.vec()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](Node<T>& self) {
    Tensor<T> ga = a, gb = b;
    if (ga.requires_grad())
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga.grad()[i] += self.grad[i] * b.vec()[i];
    if (gb.requires_grad())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb.grad()[i] += self.grad[i] * a.vec()[i];
  }, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] * s;
  return make_result<T>(a.shape(), std::move(out), {a}, [a, s](Node<T>& self) {
    Tensor<T> ga = a;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga.grad()[i] += self.grad[i] * s;
  }, "scale");
}

// x + y where y's shape equals the trailing dims of x's shape. The gradient of
// y is summed over the leading dims.
template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  bool ok = ys.size() <= xs.size();
  for (std::size_t i = 0; ok && i < ys.size(); ++i) ok = ys[ys.size() - 1 - i] == xs[xs.size() - 1 - i];
  if (!ok)
    fail(ErrorCode::kDimension,
         "add_broadcast: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  const std::size_t inner = y.size();
  const std::size_t outer = x.size() / inner;
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = x.vec()[o * inner + i] + y.vec()[i];
  return make_result<T>(xs, std::move(out), {x, y}, [x, y, inner, outer](Node<T>& self) {
    Tensor<T> gx = x, gy = y;
    if (gx.requires_grad())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx.grad()[i] += self.grad[i];
    if (gy.requires_grad())
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) gy.grad()[i] += self.grad[o * inner + i];
  }, "add_broadcast");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.vec()) s += v;
  return make_result<T>({1}, {s}, {a}, [a](Node<T>& self) {
    Tensor<T> ga = a;
    const T g = self.grad[0];
    for (auto& v : ga.grad()) v += g;
  }, "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size())
    fail(ErrorCode::kDimension,
         "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  return make_result<T>(std::move(shape), a.vec(), {a}, [a](Node<T>& self) {
    Tensor<T> ga = a;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga.grad()[i] += self.grad[i];
  }, "reshape");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] > T(0) ? a.vec()[i] : T(0);
  return make_result<T>(a.shape(), std::move(out), {a}, [a](Node<T>& self) {
    Tensor<T> ga = a;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (a.vec()[i] > T(0)) ga.grad()[i] += self.grad[i];
  }, "relu");
}

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline constexpr double kGeluCubic = 0.044715;

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T k = static_cast<T>(kGeluCubic);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.vec()[i];
    out[i] = T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x)));
  }
  return make_result<T>(a.shape(), std::move(out), {a}, [a, c, k](Node<T>& self) {
    Tensor<T> ga = a;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T x = a.vec()[i];
      const T t = std::tanh(c * (x + k * x * x * x));
      const T d = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
      ga.grad()[i] += self.grad[i] * d;
    }
  }, "gelu");
}

// ---------------------------------------------------------------------------
// Index gather: out[i] = x[index[i]], or 0 where index[i] < 0. Covers every
// pure data-movement op (permutes, rolls, window partitions, table lookups).

struct IndexMap {
  Shape out_shape;
  std::vector<std::int64_t> index;
};

// Composition: applying `second` to the result of `first`.
inline IndexMap compose(const IndexMap& first, const IndexMap& second) {
  IndexMap out{second.out_shape, std::vector<std::int64_t>(second.index.size())};
  for (std::size_t i = 0; i < second.index.size(); ++i) {
    const std::int64_t j = second.index[i];
    out.index[i] = j < 0 ? -1 : first.index[static_cast<std::size_t>(j)];
  }
  return out;
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, const IndexMap& map) {
  require(numel(map.out_shape) == map.index.size(), ErrorCode::kDimension,
          "gather: index length does not match output shape " + shape_str(map.out_shape));
  std::vector<T> out(map.index.size());
  const auto n = static_cast<std::int64_t>(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::int64_t j = map.index[i];
    if (j >= n) fail(ErrorCode::kDimension, "gather: index out of range");
    out[i] = j < 0 ? T(0) : x.vec()[static_cast<std::size_t>(j)];
  }
  auto idx = std::make_shared<std::vector<std::int64_t>>(map.index);
  return make_result<T>(map.out_shape, std::move(out), {x}, [x, idx](Node<T>& self) {
    Tensor<T> gx = x;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const std::int64_t j = (*idx)[i];
      if (j >= 0) gx.grad()[static_cast<std::size_t>(j)] += self.grad[i];
    }
  }, "gather");
}

// Generic axis permutation expressed as an index map.
inline IndexMap permute_map(const Shape& in, const std::vector<std::size_t>& perm) {
  require(perm.size() == in.size(), ErrorCode::kDimension, "permute: rank mismatch");
  Shape out(in.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[i] = in[perm[i]];
  std::vector<std::size_t> in_stride(in.size(), 1);
  for (std::size_t i = in.size(); i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  IndexMap m{out, std::vector<std::int64_t>(numel(out))};
  std::vector<std::size_t> coord(out.size(), 0);
  for (std::size_t flat = 0; flat < m.index.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < out.size(); ++d) src += coord[d] * in_stride[perm[d]];
    m.index[flat] = static_cast<std::int64_t>(src);
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++coord[d] < out[d]) break;
      coord[d] = 0;
    }
  }
  return m;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  return gather(x, permute_map(x.shape(), perm));
}

// ---------------------------------------------------------------------------
// Matrix products

// a[..., m, k] · b[..., k, n] (or b[n, k] with transpose_b). b either carries
// the same leading batch dims as a or is a plain matrix shared by every batch.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto mismatch = [&] {
    fail(ErrorCode::kDimension, "matmul: incompatible shapes " + shape_str(as) + " and " +
                                    shape_str(bs) + (transpose_b ? " (b transposed)" : ""));
  };
  if (as.size() < 2 || bs.size() < 2) mismatch();
  const std::size_t m = as[as.size() - 2], k = as.back();
  const std::size_t bk = transpose_b ? bs.back() : bs[bs.size() - 2];
  const std::size_t n = transpose_b ? bs[bs.size() - 2] : bs.back();
  if (bk != k) mismatch();
  const bool shared_b = bs.size() == 2;
  if (!shared_b && (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())))
    mismatch();
  const std::size_t batch = a.size() / (m * k);
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<T> out(batch * m * n);
  if (shared_b) {
    // Fold the batch into the row dimension.
    kernel::gemm(false, transpose_b, batch * m, n, k, a.vec().data(), b.vec().data(), out.data(), false);
  } else {
    for (std::size_t bi = 0; bi < batch; ++bi) {
      kernel::gemm(false, transpose_b, m, n, k, a.vec().data() + bi * m * k, b.vec().data() + bi * k * n,
                   out.data() + bi * m * n, false);
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a, b},
                        [a, b, m, n, k, batch, shared_b, transpose_b](Node<T>& self) {
    Tensor<T> ga = a, gb = b;
    const T* g = self.grad.data();
    if (ga.requires_grad()) {
      // dA = dC · op(B)^T
      if (shared_b) {
        kernel::gemm(false, !transpose_b, batch * m, k, n, g, b.vec().data(), ga.grad().data(), true);
      } else {
        for (std::size_t bi = 0; bi < batch; ++bi)
          kernel::gemm(false, !transpose_b, m, k, n, g + bi * m * n, b.vec().data() + bi * k * n,
                       ga.grad().data() + bi * m * k, true);
      }
    }
    if (gb.requires_grad()) {
      // dB = A^T · dC, or dC^T · A when B is stored transposed.
      if (shared_b) {
        if (!transpose_b)
          kernel::gemm(true, false, k, n, batch * m, a.vec().data(), g, gb.grad().data(), true);
        else
          kernel::gemm(true, false, n, k, batch * m, g, a.vec().data(), gb.grad().data(), true);
      } else {
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const T* ap = a.vec().data() + bi * m * k;
          const T* gp = g + bi * m * n;
          T* dst = gb.grad().data() + bi * k * n;
          if (!transpose_b)
            kernel::gemm(true, false, k, n, m, ap, gp, dst, true);
          else
            kernel::gemm(true, false, n, k, m, gp, ap, dst, true);
        }
      }
    }
  }, "matmul");
}

// x[..., in] · w[in, out] + bias[out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  Tensor<T> y = matmul(x, weight);
  return bias.defined() ? add_broadcast(y, bias) : y;
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(x.rank() >= 1, ErrorCode::kDimension, "layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  require(d >= 1 && gamma.size() == d && beta.size() == d, ErrorCode::kDimension,
          "layer_norm: gamma/beta must have length " + std::to_string(d));
  require(eps > T(0), ErrorCode::kConfig, "layer_norm: eps must be positive");
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.vec().data() + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (xr[i] - mu) * is;
      (*xhat)[r * d + i] = h;
      out[r * d + i] = h * gamma.vec()[i] + beta.vec()[i];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat, inv_std, d, rows](Node<T>& self) {
    Tensor<T> gx = x, gg = gamma, gbt = beta;
    std::vector<T> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = self.grad.data() + r * d;
      const T* h = xhat->data() + r * d;
      if (gg.requires_grad())
        for (std::size_t i = 0; i < d; ++i) gg.grad()[i] += g[i] * h[i];
      if (gbt.requires_grad())
        for (std::size_t i = 0; i < d; ++i) gbt.grad()[i] += g[i];
      if (gx.requires_grad()) {
        T m1 = 0, m2 = 0;
        for (std::size_t i = 0; i < d; ++i) {
          dxhat[i] = g[i] * gamma.vec()[i];
          m1 += dxhat[i];
          m2 += dxhat[i] * h[i];
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        T* dx = gx.grad().data() + r * d;
        for (std::size_t i = 0; i < d; ++i) dx[i] += (*inv_std)[r] * (dxhat[i] - m1 - h[i] * m2);
      }
    }
  }, "layer_norm");
}

// ---------------------------------------------------------------------------
// Softmax family (max-subtracted)

namespace detail {
struct AxisSplit {
  std::size_t outer, n, inner;
};
inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  require(axis < s.size(), ErrorCode::kDimension, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}
}  // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto [outer, n, inner] = detail::split_axis(x.shape(), axis);
  std::vector<T> out(x.size());
  const T* xs = x.vec().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, xs[base + i * inner]);
      T s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T e = std::exp(xs[base + i * inner] - mx);
        out[base + i * inner] = e;
        s += e;
      }
      const T inv = T(1) / s;
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] *= inv;
    }
  return make_result<T>(x.shape(), std::move(out), {x}, [x, outer = outer, n = n, inner = inner](Node<T>& self) {
    Tensor<T> gx = x;
    const T* y = self.data.data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot = 0;
        for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < n; ++i)
          gx.grad()[base + i * inner] += y[base + i * inner] * (g[base + i * inner] - dot);
      }
  }, "softmax");
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto [outer, n, inner] = detail::split_axis(x.shape(), axis);
  std::vector<T> out(x.size());
  const T* xs = x.vec().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, xs[base + i * inner]);
      T s = 0;
      for (std::size_t i = 0; i < n; ++i) s += std::exp(xs[base + i * inner] - mx);
      const T lse = mx + std::log(s);
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] = xs[base + i * inner] - lse;
    }
  return make_result<T>(x.shape(), std::move(out), {x}, [x, outer = outer, n = n, inner = inner](Node<T>& self) {
    Tensor<T> gx = x;
    const T* y = self.data.data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T gs = 0;
        for (std::size_t i = 0; i < n; ++i) gs += g[base + i * inner];
        for (std::size_t i = 0; i < n; ++i)
          gx.grad()[base + i * inner] += g[base + i * inner] - std::exp(y[base + i * inner]) * gs;
      }
  }, "log_softmax");
}

// ---------------------------------------------------------------------------
// Spatial ops on NCHW tensors

namespace detail {
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                                   const char* op) {
  const auto span = static_cast<std::int64_t>(in + 2 * pad) - static_cast<std::int64_t>(k);
  if (stride == 0 || span < 0)
    fail(ErrorCode::kDimension, std::string(op) + ": non-positive output extent for input " +
                                    std::to_string(in) + ", kernel " + std::to_string(k) +
                                    ", stride " + std::to_string(stride) + ", padding " + std::to_string(pad));
  return static_cast<std::size_t>(span) / stride + 1;
}

template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        T* row = cols + ((ci * kh + i) * kw + j) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::int64_t>(oy * stride + i) - static_cast<std::int64_t>(pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::int64_t>(h)) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::int64_t>(ox * stride + j) - static_cast<std::int64_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::int64_t>(w)) ? T(0) : src[ix];
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* x) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        const T* row = cols + ((ci * kh + i) * kw + j) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::int64_t>(oy * stride + i) - static_cast<std::int64_t>(pad);
          if (iy < 0 || iy >= static_cast<std::int64_t>(h)) continue;
          T* dst = x + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::int64_t>(ox * stride + j) - static_cast<std::int64_t>(pad);
            if (ix >= 0 && ix < static_cast<std::int64_t>(w)) dst[ix] += row[oy * wo + ox];
          }
        }
      }
}
}  // namespace detail

// Cross-correlation. x[b,c,h,w], weight[o,c,kh,kw], bias[o] (may be undefined).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1))
    fail(ErrorCode::kDimension,
         "conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " + shape_str(weight.shape()));
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (bias.defined()) require(bias.size() == o, ErrorCode::kDimension, "conv2d: bias length mismatch");
  const std::size_t ho = detail::conv_out_extent(h, kh, stride, pad, "conv2d");
  const std::size_t wo = detail::conv_out_extent(w, kw, stride, pad, "conv2d");
  const std::size_t ckk = c * kh * kw, hw = ho * wo;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

  std::vector<T> out(b * o * hw);
  std::vector<T> cols(pointwise ? 0 : ckk * hw);
  for (std::size_t bi = 0; bi < b; ++bi) {
    const T* xb = x.vec().data() + bi * c * h * w;
    const T* colp = xb;
    if (!pointwise) {
      detail::im2col(xb, c, h, w, kh, kw, stride, pad, ho, wo, cols.data());
      colp = cols.data();
    }
    T* ob = out.data() + bi * o * hw;
    kernel::gemm_nn(o, hw, ckk, weight.vec().data(), colp, ob, false);
    if (bias.defined())
      for (std::size_t oc = 0; oc < o; ++oc)
        for (std::size_t p = 0; p < hw; ++p) ob[oc * hw + p] += bias.vec()[oc];
  }
  return make_result<T>({b, o, ho, wo}, std::move(out), {x, weight, bias},
                        [=](Node<T>& self) {
    Tensor<T> gx = x, gw = weight, gbias = bias;
    std::vector<T> cols_buf(pointwise ? 0 : ckk * hw);
    std::vector<T> gcols(pointwise ? 0 : ckk * hw);
    for (std::size_t bi = 0; bi < b; ++bi) {
      const T* g = self.grad.data() + bi * o * hw;
      const T* xb = x.vec().data() + bi * c * h * w;
      if (gbias.defined() && gbias.requires_grad())
        for (std::size_t oc = 0; oc < o; ++oc) {
          T s = 0;
          for (std::size_t p = 0; p < hw; ++p) s += g[oc * hw + p];
          gbias.grad()[oc] += s;
        }
      if (gw.requires_grad()) {
        const T* colp = xb;
        if (!pointwise) {
          detail::im2col(xb, c, h, w, kh, kw, stride, pad, ho, wo, cols_buf.data());
          colp = cols_buf.data();
        }
        kernel::gemm(false, true, o, ckk, hw, g, colp, gw.grad().data(), true);
      }
      if (gx.requires_grad()) {
        T* gxb = gx.grad().data() + bi * c * h * w;
        if (pointwise) {
          kernel::gemm(true, false, ckk, hw, o, weight.vec().data(), g, gxb, true);
        } else {
          kernel::gemm(true, false, ckk, hw, o, weight.vec().data(), g, gcols.data(), false);
          detail::col2im(gcols.data(), c, h, w, kh, kw, stride, pad, ho, wo, gxb);
        }
      }
    }
  }, "conv2d");
}

// Max pooling; padded cells never win. Ties resolve to the first cell in scan order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k, std::size_t stride, std::size_t pad = 0) {
  require(x.rank() == 4, ErrorCode::kDimension, "maxpool2d: expected NCHW, got " + shape_str(x.shape()));
  require(pad < k, ErrorCode::kDimension, "maxpool2d: padding must be smaller than the kernel");
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = detail::conv_out_extent(h, k, stride, pad, "maxpool2d");
  const std::size_t wo = detail::conv_out_extent(w, k, stride, pad, "maxpool2d");
  std::vector<T> out(b * c * ho * wo);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t p = 0; p < b * c; ++p) {
    const T* src = x.vec().data() + p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < k; ++i) {
          const auto iy = static_cast<std::int64_t>(oy * stride + i) - static_cast<std::int64_t>(pad);
          if (iy < 0 || iy >= static_cast<std::int64_t>(h)) continue;
          for (std::size_t j = 0; j < k; ++j) {
            const auto ix = static_cast<std::int64_t>(ox * stride + j) - static_cast<std::int64_t>(pad);
            if (ix < 0 || ix >= static_cast<std::int64_t>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (src[idx] > best) {
              best = src[idx];
              best_i = idx;
            }
          }
        }
        const std::size_t oi = (p * ho + oy) * wo + ox;
        out[oi] = best;
        (*arg)[oi] = p * h * w + best_i;
      }
  }
  return make_result<T>({b, c, ho, wo}, std::move(out), {x}, [x, arg](Node<T>& self) {
    Tensor<T> gx = x;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx.grad()[(*arg)[i]] += self.grad[i];
  }, "maxpool2d");
}

namespace detail {
// Bilinear source taps for a factor-2 upsample, align_corners = false:
// src = (dst + 0.5) / 2 - 0.5, clamped to the valid range.
struct LerpTap {
  std::size_t i0, i1;
  double w1;
};
inline std::vector<LerpTap> upsample_taps(std::size_t in) {
  std::vector<LerpTap> taps(2 * in);
  for (std::size_t o = 0; o < 2 * in; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}
}  // namespace detail

// Bilinear 2x upsampling with the align_corners = false convention.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  require(x.rank() == 4, ErrorCode::kDimension, "upsample2x: expected NCHW, got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = 2 * h, wo = 2 * w;
  const auto ty = detail::upsample_taps(h);
  const auto tx = detail::upsample_taps(w);
  std::vector<T> out(b * c * ho * wo);
  for (std::size_t p = 0; p < b * c; ++p) {
    const T* src = x.vec().data() + p * h * w;
    T* dst = out.data() + p * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const T wy1 = static_cast<T>(ty[oy].w1), wy0 = T(1) - wy1;
      const T* r0 = src + ty[oy].i0 * w;
      const T* r1 = src + ty[oy].i1 * w;
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const T wx1 = static_cast<T>(tx[ox].w1), wx0 = T(1) - wx1;
        dst[oy * wo + ox] = wy0 * (wx0 * r0[tx[ox].i0] + wx1 * r0[tx[ox].i1]) +
                            wy1 * (wx0 * r1[tx[ox].i0] + wx1 * r1[tx[ox].i1]);
      }
    }
  }
  return make_result<T>({b, c, ho, wo}, std::move(out), {x}, [x, ty, tx, b, c, h, w, ho, wo](Node<T>& self) {
    Tensor<T> gx = x;
    for (std::size_t p = 0; p < b * c; ++p) {
      const T* g = self.grad.data() + p * ho * wo;
      T* dst = gx.grad().data() + p * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const T wy1 = static_cast<T>(ty[oy].w1), wy0 = T(1) - wy1;
        T* r0 = dst + ty[oy].i0 * w;
        T* r1 = dst + ty[oy].i1 * w;
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T wx1 = static_cast<T>(tx[ox].w1), wx0 = T(1) - wx1;
          const T gv = g[oy * wo + ox];
          r0[tx[ox].i0] += gv * wy0 * wx0;
          r0[tx[ox].i1] += gv * wy0 * wx1;
          r1[tx[ox].i0] += gv * wy1 * wx0;
          r1[tx[ox].i1] += gv * wy1 * wx1;
        }
      }
    }
  }, "upsample2x");
}

// Concatenate two NCHW tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    fail(ErrorCode::kDimension,
         "concat_channels: " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " disagree");
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> out(n * (ca + cb) * hw);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.vec().data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b.vec().data() + i * cb * hw, cb * hw, out.data() + i * (ca + cb) * hw + ca * hw);
  }
  return make_result<T>({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                        [a, b, n, ca, cb, hw](Node<T>& self) {
    Tensor<T> ga = a, gb = b;
    for (std::size_t i = 0; i < n; ++i) {
      const T* g = self.grad.data() + i * (ca + cb) * hw;
      if (ga.requires_grad())
        for (std::size_t j = 0; j < ca * hw; ++j) ga.grad()[i * ca * hw + j] += g[j];
      if (gb.requires_grad())
        for (std::size_t j = 0; j < cb * hw; ++j) gb.grad()[i * cb * hw + j] += g[ca * hw + j];
    }
  }, "concat_channels");
}

}  // namespace swtr
