#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mfield/ad/tensor.hpp"

// Differentiable primitives. Binary ops broadcast over the [rows, cols] view:
// each extent of an operand must match the output or be 1.

namespace mfield::ad {

namespace detail {

struct Broadcast {
  std::size_t rows, cols, ar, ac, br, bc;

  std::size_t a_index(std::size_t r, std::size_t c) const {
    return (ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c);
  }
  std::size_t b_index(std::size_t r, std::size_t c) const {
    return (br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c);
  }
};

template <class Real>
Broadcast broadcast_shapes(const Tensor<Real>& a, const Tensor<Real>& b, Shape& out_shape) {
  Broadcast bc{0, 0, a.rows(), a.cols(), b.rows(), b.cols()};
  auto merge = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError("cannot broadcast " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
  };
  bc.rows = merge(bc.ar, bc.br);
  bc.cols = merge(bc.ac, bc.bc);
  if (a.numel() == bc.rows * bc.cols) {
    out_shape = a.shape();
  } else if (b.numel() == bc.rows * bc.cols) {
    out_shape = b.shape();
  } else {
    out_shape = {bc.rows, bc.cols};
  }
  return bc;
}

// f(a, b) -> value; da(a, b, y) and db(a, b, y) -> partials.
template <class Real, class F, class DA, class DB>
Tensor<Real> binary(const Tensor<Real>& a, const Tensor<Real>& b, const char* name, F f, DA da, DB db) {
  Shape shape;
  const Broadcast bc = broadcast_shapes(a, b, shape);
  std::vector<Real> out(bc.rows * bc.cols);
  const auto av = a.data();
  const auto bv = b.data();
  if (bc.ar == bc.rows && bc.br == bc.rows && bc.ac == bc.cols && bc.bc == bc.cols) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t r = 0; r < bc.rows; ++r)
      for (std::size_t c = 0; c < bc.cols; ++c)
        out[r * bc.cols + c] = f(av[bc.a_index(r, c)], bv[bc.b_index(r, c)]);
  }
  return make_result<Real>(std::move(shape), std::move(out), name, {a, b},
                           [bc, da, db](Node<Real>& self) {
                             const auto& av = *self.parents[0]->value;
                             const auto& bv = *self.parents[1]->value;
                             const auto& y = *self.value;
                             Real* ga = parent_grad(self, 0);
                             Real* gb = parent_grad(self, 1);
                             for (std::size_t r = 0; r < bc.rows; ++r) {
                               for (std::size_t c = 0; c < bc.cols; ++c) {
                                 const std::size_t o = r * bc.cols + c;
                                 const Real g = self.grad[o];
                                 const std::size_t ia = bc.a_index(r, c);
                                 const std::size_t ib = bc.b_index(r, c);
                                 if (ga) ga[ia] += g * da(av[ia], bv[ib], y[o]);
                                 if (gb) gb[ib] += g * db(av[ia], bv[ib], y[o]);
                               }
                             }
                           });
}

// f(x) -> y; df(x, y) -> dy/dx.
template <class Real, class F, class DF>
Tensor<Real> unary(const Tensor<Real>& x, const char* name, F f, DF df) {
  const auto xv = x.data();
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result<Real>(x.shape(), std::move(out), name, {x}, [df](Node<Real>& self) {
    const auto& xv = *self.parents[0]->value;
    const auto& y = *self.value;
    Real* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += self.grad[i] * df(xv[i], y[i]);
  });
}

}  // namespace detail

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(
      a, b, "add", [](Real x, Real y) { return x + y; }, [](Real, Real, Real) { return Real(1); },
      [](Real, Real, Real) { return Real(1); });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(
      a, b, "sub", [](Real x, Real y) { return x - y; }, [](Real, Real, Real) { return Real(1); },
      [](Real, Real, Real) { return Real(-1); });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(
      a, b, "mul", [](Real x, Real y) { return x * y; }, [](Real, Real y, Real) { return y; },
      [](Real x, Real, Real) { return x; });
}

template <class Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(
      a, b, "div", [](Real x, Real y) { return x / y; }, [](Real, Real y, Real) { return Real(1) / y; },
      [](Real, Real y, Real out) { return -out / y; });
}

template <class Real>
Tensor<Real> neg(const Tensor<Real>& x) {
  return detail::unary(
      x, "neg", [](Real v) { return -v; }, [](Real, Real) { return Real(-1); });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real s) {
  return detail::unary(
      x, "scale", [s](Real v) { return v * s; }, [s](Real, Real) { return s; });
}

template <class Real>
Tensor<Real> shift(const Tensor<Real>& x, Real s) {
  return detail::unary(
      x, "shift", [s](Real v) { return v + s; }, [](Real, Real) { return Real(1); });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return detail::unary(
      x, "sigmoid", [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <class Real>
Real softplus_value(Real v) {
  return v > Real(20) ? v : std::log1p(std::exp(v));
}

template <class Real>
Tensor<Real> softplus(const Tensor<Real>& x) {
  return detail::unary(
      x, "softplus", [](Real v) { return softplus_value(v); },
      [](Real v, Real) { return Real(1) / (Real(1) + std::exp(-v)); });
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  return detail::unary(
      x, "relu", [](Real v) { return v > Real(0) ? v : Real(0); },
      [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

template <class Real>
Tensor<Real> sin(const Tensor<Real>& x) {
  return detail::unary(
      x, "sin", [](Real v) { return std::sin(v); }, [](Real v, Real) { return std::cos(v); });
}

template <class Real>
Tensor<Real> cos(const Tensor<Real>& x) {
  return detail::unary(
      x, "cos", [](Real v) { return std::cos(v); }, [](Real v, Real) { return -std::sin(v); });
}

template <class Real>
Tensor<Real> exp(const Tensor<Real>& x) {
  return detail::unary(
      x, "exp", [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

template <class Real>
Tensor<Real> log(const Tensor<Real>& x) {
  return detail::unary(
      x, "log", [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

template <class Real>
Tensor<Real> sqrt(const Tensor<Real>& x) {
  return detail::unary(
      x, "sqrt", [](Real v) { return std::sqrt(v); },
      [](Real, Real y) { return y > Real(0) ? Real(0.5) / y : Real(0); });
}

template <class Real>
Tensor<Real> pow(const Tensor<Real>& x, Real p) {
  return detail::unary(
      x, "pow", [p](Real v) { return std::pow(v, p); },
      [p](Real v, Real) { return p == Real(0) ? Real(0) : p * std::pow(v, p - Real(1)); });
}

/// Clamp with a hard gradient stop outside [lo, hi].
template <class Real>
Tensor<Real> clamp(const Tensor<Real>& x, Real lo, Real hi) {
  return detail::unary(
      x, "clamp", [lo, hi](Real v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](Real v, Real) { return (v >= lo && v <= hi) ? Real(1) : Real(0); });
}

/// Rounds down. Has no derivative rule: backward() through it raises.
template <class Real>
Tensor<Real> floor(const Tensor<Real>& x) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::floor(x[i]);
  return make_opaque_result<Real>(x.shape(), std::move(out), "floor", {x});
}

template <class Real> Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) { return add(a, b); }
template <class Real> Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) { return sub(a, b); }
template <class Real> Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) { return mul(a, b); }
template <class Real> Tensor<Real> operator/(const Tensor<Real>& a, const Tensor<Real>& b) { return div(a, b); }
template <class Real> Tensor<Real> operator-(const Tensor<Real>& a) { return neg(a); }
template <class Real> Tensor<Real> operator+(const Tensor<Real>& a, Real s) { return shift(a, s); }
template <class Real> Tensor<Real> operator+(Real s, const Tensor<Real>& a) { return shift(a, s); }
template <class Real> Tensor<Real> operator-(const Tensor<Real>& a, Real s) { return shift(a, -s); }
template <class Real> Tensor<Real> operator-(Real s, const Tensor<Real>& a) { return shift(neg(a), s); }
template <class Real> Tensor<Real> operator*(const Tensor<Real>& a, Real s) { return scale(a, s); }
template <class Real> Tensor<Real> operator*(Real s, const Tensor<Real>& a) { return scale(a, s); }
template <class Real> Tensor<Real> operator/(const Tensor<Real>& a, Real s) { return scale(a, Real(1) / s); }

template <class Real>
Tensor<Real> operator/(Real s, const Tensor<Real>& a) {
  return detail::unary(
      a, "reciprocal", [s](Real v) { return s / v; }, [](Real v, Real y) { return -y / v; });
}

/// [n, k] x [k, m] -> [n, m].
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<Real> out(n * m, Real(0));
  const Real* A = a.data().data();
  const Real* B = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    Real* row = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = A[i * k + p];
      if (aip == Real(0)) continue;
      const Real* brow = B + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += aip * brow[j];
    }
  }
  return make_result<Real>({n, m}, std::move(out), "matmul", {a, b}, [n, k, m](detail::Node<Real>& self) {
    const Real* A = self.parents[0]->value->data();
    const Real* B = self.parents[1]->value->data();
    const Real* G = self.grad.data();
    if (Real* ga = detail::parent_grad(self, 0)) {
      // ga += G B^T, accumulated as row updates so the inner loop vectorizes.
      std::vector<Real> bt(m * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = B[p * m + j];
      for (std::size_t i = 0; i < n; ++i) {
        Real* arow = ga + i * k;
        const Real* grow = G + i * m;
        for (std::size_t j = 0; j < m; ++j) {
          const Real gij = grow[j];
          if (gij == Real(0)) continue;
          const Real* btrow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) arow[p] += gij * btrow[p];
        }
      }
    }
    if (Real* gb = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        const Real* grow = G + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const Real aip = A[i * k + p];
          if (aip == Real(0)) continue;
          Real* gbrow = gb + p * m;
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real acc = 0;
  for (Real v : x.data()) acc += v;
  return make_result<Real>({1}, {acc}, "sum", {x}, [](detail::Node<Real>& self) {
    Real* gx = detail::parent_grad(self, 0);
    const std::size_t n = self.parents[0]->numel();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

/// Row-wise sum over the last extent: [r, c] -> [r, 1].
template <class Real>
Tensor<Real> sum_cols(const Tensor<Real>& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<Real> out(r, Real(0));
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += xv[i * c + j];
  return make_result<Real>({r, 1}, std::move(out), "sum_cols", {x}, [r, c](detail::Node<Real>& self) {
    Real* gx = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[i];
  });
}

/// Sums consecutive row ranges [offsets[s], offsets[s+1]) into row s.
template <class Real>
Tensor<Real> segment_sum(const Tensor<Real>& x, std::vector<std::size_t> offsets) {
  if (offsets.empty() || offsets.back() != x.rows()) throw ShapeError("segment_sum offsets do not cover rows");
  const std::size_t segs = offsets.size() - 1, c = x.cols();
  std::vector<Real> out(segs * c, Real(0));
  const auto xv = x.data();
  for (std::size_t s = 0; s < segs; ++s)
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i)
      for (std::size_t j = 0; j < c; ++j) out[s * c + j] += xv[i * c + j];
  return make_result<Real>({segs, c}, std::move(out), "segment_sum", {x},
                           [offsets = std::move(offsets), c](detail::Node<Real>& self) {
                             Real* gx = detail::parent_grad(self, 0);
                             for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
                               for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i)
                                 for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[s * c + j];
                           });
}

/// Mean over consecutive groups of `group` rows: [r*group, c] -> [r, c].
template <class Real>
Tensor<Real> group_mean(const Tensor<Real>& x, std::size_t group) {
  if (group == 0 || x.rows() % group != 0) throw ShapeError("group_mean: rows not divisible by group");
  std::vector<std::size_t> offsets(x.rows() / group + 1);
  for (std::size_t s = 0; s < offsets.size(); ++s) offsets[s] = s * group;
  return scale(segment_sum(x, std::move(offsets)), Real(1) / static_cast<Real>(group));
}

/// Concatenates along the last extent; all inputs share the row count.
template <class Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols row mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<Real> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + offset + j] = pv[i * w + j];
    offset += w;
  }
  return make_result<Real>({r, total}, std::move(out), "concat", parts,
                           [widths, r, total](detail::Node<Real>& self) {
                             std::size_t offset = 0;
                             for (std::size_t k = 0; k < widths.size(); ++k) {
                               const std::size_t w = widths[k];
                               if (Real* g = detail::parent_grad(self, k)) {
                                 for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * total + offset + j];
                               }
                               offset += w;
                             }
                           });
}

/// Columns [begin, end) of every row.
template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  const std::size_t r = x.rows(), c = x.cols();
  if (begin > end || end > c) throw ShapeError("slice_cols out of range");
  const std::size_t w = end - begin;
  std::vector<Real> out(r * w);
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * c + begin + j];
  return make_result<Real>({r, w}, std::move(out), "slice_cols", {x}, [r, c, w, begin](detail::Node<Real>& self) {
    Real* gx = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += self.grad[i * w + j];
  });
}

template <class Real>
Tensor<Real> col(const Tensor<Real>& x, std::size_t j) {
  return slice_cols(x, j, j + 1);
}

/// Gathers rows; backward scatter-adds in index order.
template <class Real>
Tensor<Real> index_rows(const Tensor<Real>& x, std::vector<std::size_t> index) {
  const std::size_t c = x.cols(), r = x.rows();
  std::vector<Real> out(index.size() * c);
  const auto xv = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= r) throw ShapeError("index_rows index out of range");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[index[i] * c + j];
  }
  const std::size_t n = index.size();
  return make_result<Real>({n, c}, std::move(out), "index_rows", {x},
                           [index = std::move(index), c](detail::Node<Real>& self) {
                             Real* gx = detail::parent_grad(self, 0);
                             for (std::size_t i = 0; i < index.size(); ++i)
                               for (std::size_t j = 0; j < c; ++j) gx[index[i] * c + j] += self.grad[i * c + j];
                           });
}

/// Each row repeated `times` consecutively.
template <class Real>
Tensor<Real> repeat_rows(const Tensor<Real>& x, std::size_t times) {
  std::vector<std::size_t> index(x.rows() * times);
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i / times;
  return index_rows(x, std::move(index));
}

// Helpers for [n, 3] direction tensors.

template <class Real>
Tensor<Real> dot3(const Tensor<Real>& a, const Tensor<Real>& b) {
  return sum_cols(mul(a, b));
}

template <class Real>
Tensor<Real> normalize3(const Tensor<Real>& a, Real eps = Real(1e-12)) {
  return div(a, sqrt(shift(dot3(a, a), eps)));
}

}  // namespace mfield::ad
