#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfield/ad/ops.hpp"
#include "mfield/ad/rng.hpp"
#include "mfield/vec3.hpp"

namespace mfield {

/// Low-rank vector-matrix factorization of a feature volume.
///
/// Three plane factors over the axis pairs (x,y), (x,z), (y,z) pair with line
/// factors over z, y, x respectively. Each channel has its own rank-R sum:
///
///   f_c(p) = sum_m sum_r P_m[r,c](p_a, p_b) * L_m[r,c](p_k)
///
/// Factors are stored node-aligned (the first and last node sit on the box
/// faces) and interpolated (bi)linearly, so a query equals trilinear
/// interpolation of the dense reconstruction. Plane m has shape
/// {res[a], res[b], rank, channels}; line m has shape {res[k], rank, channels}.
template <class Real>
class VMGrid {
 public:
  static constexpr std::array<std::array<int, 2>, 3> kPlaneAxes{{{0, 1}, {0, 2}, {1, 2}}};
  static constexpr std::array<int, 3> kLineAxis{2, 1, 0};

  VMGrid() = default;
  VMGrid(std::array<std::size_t, 3> resolution, std::size_t rank, std::size_t channels, Aabb box)
      : resolution_(resolution), rank_(rank), channels_(channels), box_(box) {
    for (auto r : resolution) {
      if (r < 2) throw std::invalid_argument("VMGrid resolution must be >= 2 per axis");
    }
    for (int m = 0; m < 3; ++m) {
      const auto [a, b] = kPlaneAxes[m];
      planes_[m] = ad::Tensor<Real>::zeros({resolution[a], resolution[b], rank, channels}, true);
      lines_[m] = ad::Tensor<Real>::zeros({resolution[kLineAxis[m]], rank, channels}, true);
    }
  }

  /// Factors drawn i.i.d. from N(0, stddev^2).
  void init_normal(Rng& rng, double stddev) {
    for (auto* t : {&planes_[0], &planes_[1], &planes_[2], &lines_[0], &lines_[1], &lines_[2]}) {
      for (auto& v : t->mutable_data()) v = static_cast<Real>(rng.normal(0.0, stddev));
    }
  }

  const std::array<std::size_t, 3>& resolution() const { return resolution_; }
  std::size_t rank() const { return rank_; }
  std::size_t channels() const { return channels_; }
  const Aabb& box() const { return box_; }

  ad::Tensor<Real>& plane(int m) { return planes_[m]; }
  ad::Tensor<Real>& line(int m) { return lines_[m]; }
  const ad::Tensor<Real>& plane(int m) const { return planes_[m]; }
  const ad::Tensor<Real>& line(int m) const { return lines_[m]; }

  /// Planes first, then lines.
  std::vector<ad::Tensor<Real>> tensors() const {
    return {planes_[0], planes_[1], planes_[2], lines_[0], lines_[1], lines_[2]};
  }
  std::vector<ad::Tensor<Real>*> mutable_tensors() {
    return {&planes_[0], &planes_[1], &planes_[2], &lines_[0], &lines_[1], &lines_[2]};
  }

  /// Features at each position: [n, channels]. Positions outside the box
  /// yield zero.
  ad::Tensor<Real> query(std::span<const Vec3> positions) const { return evaluate(positions, false); }

  /// Spatial derivatives of the features: [n, 3 * channels] laid out as
  /// (d/dx for all channels, d/dy ..., d/dz ...). Zero outside the box.
  ad::Tensor<Real> spatial_gradient(std::span<const Vec3> positions) const { return evaluate(positions, true); }

  /// Dense value at grid node (i, j, k), reconstructed from the factors.
  Real dense_node(std::size_t i, std::size_t j, std::size_t k, std::size_t c) const {
    const std::array<std::size_t, 3> idx{i, j, k};
    double acc = 0;
    for (int m = 0; m < 3; ++m) {
      const auto [a, b] = kPlaneAxes[m];
      const int l = kLineAxis[m];
      const auto pv = planes_[m].data();
      const auto lv = lines_[m].data();
      for (std::size_t r = 0; r < rank_; ++r) {
        const std::size_t rc = r * channels_ + c;
        acc += static_cast<double>(pv[(idx[a] * resolution_[b] + idx[b]) * rank_ * channels_ + rc]) *
               static_cast<double>(lv[idx[l] * rank_ * channels_ + rc]);
      }
    }
    return static_cast<Real>(acc);
  }

  template <class Other>
  VMGrid<Other> cast() const {
    VMGrid<Other> out;
    out.resolution_ = resolution_;
    out.rank_ = rank_;
    out.channels_ = channels_;
    out.box_ = box_;
    for (int m = 0; m < 3; ++m) {
      out.planes_[m] = planes_[m].template cast<Other>();
      out.lines_[m] = lines_[m].template cast<Other>();
    }
    return out;
  }

  /// Same values, fresh gradient buffers.
  VMGrid aliased() const {
    VMGrid out = *this;
    for (int m = 0; m < 3; ++m) {
      out.planes_[m] = planes_[m].alias();
      out.lines_[m] = lines_[m].alias();
    }
    return out;
  }

  VMGrid deep_copy() const {
    VMGrid out = *this;
    for (int m = 0; m < 3; ++m) {
      out.planes_[m] = planes_[m].clone();
      out.lines_[m] = lines_[m].clone();
    }
    return out;
  }

 private:
  template <class> friend class VMGrid;

  struct AxisSample {
    std::size_t i0 = 0;
    double frac = 0.0;
    double scale = 0.0;  // d(grid coordinate)/d(world)
  };

  // Per-mode interpolation stencil for one point: 4 plane corners, 2 line nodes.
  struct Stencil {
    std::array<std::size_t, 4> corner{};
    std::array<std::size_t, 2> node{};
  };

  bool locate(const Vec3& p, std::array<AxisSample, 3>& s) const {
    for (int k = 0; k < 3; ++k) {
      const double extent = box_.hi[k] - box_.lo[k];
      const double n = static_cast<double>(resolution_[k] - 1);
      const double t = (p[k] - box_.lo[k]) / extent * n;
      if (!(t >= 0.0 && t <= n)) return false;
      // Nodes belong to the lower cell; the first node to cell 0.
      double i0 = std::ceil(t) - 1.0;
      i0 = std::fmin(std::fmax(i0, 0.0), n - 1.0);
      s[k].i0 = static_cast<std::size_t>(i0);
      s[k].frac = t - i0;
      s[k].scale = n / extent;
    }
    return true;
  }

  Stencil stencil(int m, const std::array<AxisSample, 3>& s) const {
    const auto [a, b] = kPlaneAxes[m];
    const int l = kLineAxis[m];
    const std::size_t rb = resolution_[b];
    const std::size_t ia = s[a].i0, ib = s[b].i0;
    Stencil st;
    st.corner = {ia * rb + ib, (ia + 1) * rb + ib, ia * rb + ib + 1, (ia + 1) * rb + ib + 1};
    st.node = {s[l].i0, s[l].i0 + 1};
    return st;
  }

  // Weights for the value (variant 0) or for d/d(axis) (variant 1 + axis).
  static void weights(int m, int variant, const std::array<AxisSample, 3>& s, std::array<double, 4>& wp,
                      std::array<double, 2>& wl) {
    const auto [a, b] = kPlaneAxes[m];
    const int l = kLineAxis[m];
    const double fa = s[a].frac, fb = s[b].frac, fl = s[l].frac;
    wp = {(1 - fa) * (1 - fb), fa * (1 - fb), (1 - fa) * fb, fa * fb};
    wl = {1 - fl, fl};
    if (variant == 0) return;
    const int d = variant - 1;
    if (d == a) {
      const double sa = s[a].scale;
      wp = {-(1 - fb) * sa, (1 - fb) * sa, -fb * sa, fb * sa};
    } else if (d == b) {
      const double sb = s[b].scale;
      wp = {-(1 - fa) * sb, -fa * sb, (1 - fa) * sb, fa * sb};
    } else {
      const double sl = s[l].scale;
      wl = {-sl, sl};
    }
  }

  ad::Tensor<Real> evaluate(std::span<const Vec3> positions, bool gradient) const {
    const std::size_t n = positions.size();
    const std::size_t rc = rank_ * channels_;
    const std::size_t variants = gradient ? 3 : 1;
    const std::size_t out_cols = variants * channels_;
    std::vector<Real> out(n * out_cols, Real(0));
    std::vector<double> pv(rc), lv(rc);
    std::array<AxisSample, 3> s;
    for (std::size_t i = 0; i < n; ++i) {
      if (!locate(positions[i], s)) continue;
      for (int m = 0; m < 3; ++m) {
        const Stencil st = stencil(m, s);
        const Real* P = planes_[m].data().data();
        const Real* L = lines_[m].data().data();
        for (std::size_t v = 0; v < variants; ++v) {
          std::array<double, 4> wp;
          std::array<double, 2> wl;
          weights(m, gradient ? static_cast<int>(v) + 1 : 0, s, wp, wl);
          for (std::size_t q = 0; q < rc; ++q) {
            pv[q] = wp[0] * P[st.corner[0] * rc + q] + wp[1] * P[st.corner[1] * rc + q] +
                    wp[2] * P[st.corner[2] * rc + q] + wp[3] * P[st.corner[3] * rc + q];
            lv[q] = wl[0] * L[st.node[0] * rc + q] + wl[1] * L[st.node[1] * rc + q];
          }
          Real* o = out.data() + i * out_cols + v * channels_;
          for (std::size_t r = 0; r < rank_; ++r)
            for (std::size_t c = 0; c < channels_; ++c) o[c] += static_cast<Real>(pv[r * channels_ + c] * lv[r * channels_ + c]);
        }
      }
    }

    std::vector<Vec3> pos(positions.begin(), positions.end());
    std::vector<ad::Tensor<Real>> parents = tensors();
    return ad::make_result<Real>(
        {n, out_cols}, std::move(out), gradient ? "vm_gradient" : "vm_query", std::move(parents),
        [grid = *this, pos = std::move(pos), gradient](ad::detail::Node<Real>& self) {
          grid.backward(pos, gradient, self);
        });
  }

  void backward(const std::vector<Vec3>& positions, bool gradient, ad::detail::Node<Real>& self) const {
    const std::size_t rc = rank_ * channels_;
    const std::size_t variants = gradient ? 3 : 1;
    const std::size_t out_cols = variants * channels_;
    std::array<Real*, 3> gp{}, gl{};
    for (int m = 0; m < 3; ++m) {
      gp[m] = ad::detail::parent_grad(self, m);
      gl[m] = ad::detail::parent_grad(self, 3 + m);
    }
    std::vector<double> pv(rc), lv(rc);
    std::array<AxisSample, 3> s;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (!locate(positions[i], s)) continue;
      const Real* g = self.grad.data() + i * out_cols;
      for (int m = 0; m < 3; ++m) {
        if (!gp[m] && !gl[m]) continue;
        const Stencil st = stencil(m, s);
        const Real* P = planes_[m].data().data();
        const Real* L = lines_[m].data().data();
        for (std::size_t v = 0; v < variants; ++v) {
          const Real* gv = g + v * channels_;
          std::array<double, 4> wp;
          std::array<double, 2> wl;
          weights(m, gradient ? static_cast<int>(v) + 1 : 0, s, wp, wl);
          for (std::size_t q = 0; q < rc; ++q) {
            pv[q] = wp[0] * P[st.corner[0] * rc + q] + wp[1] * P[st.corner[1] * rc + q] +
                    wp[2] * P[st.corner[2] * rc + q] + wp[3] * P[st.corner[3] * rc + q];
            lv[q] = wl[0] * L[st.node[0] * rc + q] + wl[1] * L[st.node[1] * rc + q];
          }
          for (std::size_t q = 0; q < rc; ++q) {
            const double gq = static_cast<double>(gv[q % channels_]);
            if (gq == 0.0) continue;
            if (gp[m]) {
              const double gl_q = gq * lv[q];
              for (int c = 0; c < 4; ++c) gp[m][st.corner[c] * rc + q] += static_cast<Real>(wp[c] * gl_q);
            }
            if (gl[m]) {
              const double gp_q = gq * pv[q];
              for (int c = 0; c < 2; ++c) gl[m][st.node[c] * rc + q] += static_cast<Real>(wl[c] * gp_q);
            }
          }
        }
      }
    }
  }

  std::array<std::size_t, 3> resolution_{};
  std::size_t rank_ = 0;
  std::size_t channels_ = 0;
  Aabb box_;
  std::array<ad::Tensor<Real>, 3> planes_;
  std::array<ad::Tensor<Real>, 3> lines_;
};

}  // namespace mfield
