#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfield/ad/ops.hpp"
#include "mfield/vec3.hpp"

namespace mfield {

/// Bilinear footprint of a direction on an equirectangular H x W image.
///
/// u = 0.5 + atan2(d_x, -d_z) / 2pi and v = acos(d_y) / pi; texel (i, j) has
/// its center at ((j + 0.5) / W, (i + 0.5) / H). Longitude wraps, latitude
/// clamps at the poles.
struct EquirectTap {
  std::size_t x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double fx = 0.0, fy = 0.0;
  // d(pixel coordinate)/d(direction component).
  Vec3 dx_dd{}, dy_dd{};

  static EquirectTap at(const Vec3& d, std::size_t height, std::size_t width) {
    EquirectTap tap;
    const double a = d[0], b = -d[2];
    const double theta = std::atan2(a, b);
    const double u = 0.5 + theta / (2.0 * M_PI);
    const double dy = std::fmax(-1.0, std::fmin(1.0, d[1]));
    const double v = std::acos(dy) / M_PI;
    const double W = static_cast<double>(width), H = static_cast<double>(height);

    const double x = u * W - 0.5;
    const double xf = std::floor(x);
    tap.fx = x - xf;
    const long long xi = static_cast<long long>(xf);
    const long long w = static_cast<long long>(width);
    tap.x0 = static_cast<std::size_t>(((xi % w) + w) % w);
    tap.x1 = (tap.x0 + 1) % width;
    const double r2 = a * a + b * b;
    if (r2 > 1e-20) {
      const double k = W / (2.0 * M_PI * r2);
      tap.dx_dd = {b * k, 0.0, a * k};  // d theta/d d_z = -d theta/d b
    }

    const double y = v * H - 0.5;
    if (y <= 0.0) {
      tap.y0 = tap.y1 = 0;
    } else if (y >= H - 1.0) {
      tap.y0 = tap.y1 = height - 1;
    } else {
      const double yf = std::floor(y);
      tap.y0 = static_cast<std::size_t>(yf);
      tap.y1 = tap.y0 + 1;
      tap.fy = y - yf;
      const double s = 1.0 - d[1] * d[1];
      if (s > 1e-12 && std::abs(d[1]) < 1.0) tap.dy_dd = {0.0, -H / (M_PI * std::sqrt(s)), 0.0};
    }
    return tap;
  }

  template <class Real>
  std::array<double, 3> sample(std::span<const Real> image, std::size_t width) const {
    std::array<double, 3> out{};
    for (int c = 0; c < 3; ++c) {
      const double t00 = image[(y0 * width + x0) * 3 + c], t10 = image[(y0 * width + x1) * 3 + c];
      const double t01 = image[(y1 * width + x0) * 3 + c], t11 = image[(y1 * width + x1) * 3 + c];
      out[c] = (1 - fx) * (1 - fy) * t00 + fx * (1 - fy) * t10 + (1 - fx) * fy * t01 + fx * fy * t11;
    }
    return out;
  }
};

/// Bilinear lookup into a linear-radiance image [H, W, 3] along directions
/// [n, 3]. Differentiable in both the image and the directions.
template <class Real>
ad::Tensor<Real> env_lookup(const ad::Tensor<Real>& image, const ad::Tensor<Real>& directions) {
  if (image.shape().size() != 3 || image.shape()[2] != 3) throw ad::ShapeError("env image must be [H, W, 3]");
  if (directions.cols() != 3) throw ad::ShapeError("directions must be [n, 3]");
  const std::size_t H = image.shape()[0], W = image.shape()[1];
  const std::size_t n = directions.rows();
  std::vector<Real> out(n * 3);
  const auto dv = directions.data();
  const auto img = image.data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto tap = EquirectTap::at({dv[i * 3], dv[i * 3 + 1], dv[i * 3 + 2]}, H, W);
    const auto rgb = tap.sample(img, W);
    for (int c = 0; c < 3; ++c) out[i * 3 + c] = static_cast<Real>(rgb[c]);
  }
  return ad::make_result<Real>({n, 3}, std::move(out), "env_lookup", {image, directions},
                               [H, W, n](ad::detail::Node<Real>& self) {
                                 const auto& img = *self.parents[0]->value;
                                 const auto& dv = *self.parents[1]->value;
                                 Real* gi = ad::detail::parent_grad(self, 0);
                                 Real* gd = ad::detail::parent_grad(self, 1);
                                 for (std::size_t i = 0; i < n; ++i) {
                                   const auto tap = EquirectTap::at({dv[i * 3], dv[i * 3 + 1], dv[i * 3 + 2]}, H, W);
                                   const Real* g = self.grad.data() + i * 3;
                                   const double w00 = (1 - tap.fx) * (1 - tap.fy), w10 = tap.fx * (1 - tap.fy);
                                   const double w01 = (1 - tap.fx) * tap.fy, w11 = tap.fx * tap.fy;
                                   double gx = 0.0, gy = 0.0;
                                   for (int c = 0; c < 3; ++c) {
                                     const std::size_t i00 = (tap.y0 * W + tap.x0) * 3 + c, i10 = (tap.y0 * W + tap.x1) * 3 + c;
                                     const std::size_t i01 = (tap.y1 * W + tap.x0) * 3 + c, i11 = (tap.y1 * W + tap.x1) * 3 + c;
                                     if (gi) {
                                       gi[i00] += static_cast<Real>(w00 * g[c]);
                                       gi[i10] += static_cast<Real>(w10 * g[c]);
                                       gi[i01] += static_cast<Real>(w01 * g[c]);
                                       gi[i11] += static_cast<Real>(w11 * g[c]);
                                     }
                                     if (gd) {
                                       const double t00 = img[i00], t10 = img[i10], t01 = img[i01], t11 = img[i11];
                                       gx += g[c] * ((1 - tap.fy) * (t10 - t00) + tap.fy * (t11 - t01));
                                       gy += g[c] * ((1 - tap.fx) * (t01 - t00) + tap.fx * (t11 - t10));
                                     }
                                   }
                                   if (gd) {
                                     for (int k = 0; k < 3; ++k)
                                       gd[i * 3 + k] += static_cast<Real>(gx * tap.dx_dd[k] + gy * tap.dy_dd[k]);
                                   }
                                 }
                               });
}

inline double softplus_inverse(double y) {
  if (y > 20.0) return y;
  return y + std::log(-std::expm1(-y));
}

/// Far-field illumination as an equirectangular map (W = 2H by convention).
/// The trainable tensor holds pre-softplus values so radiance stays >= 0.
template <class Real>
class EnvironmentMap {
 public:
  EnvironmentMap() = default;
  EnvironmentMap(std::size_t height, std::size_t width, double init_radiance = 0.5)
      : height_(height), width_(width) {
    raw_ = ad::Tensor<Real>::full({height, width, 3}, static_cast<Real>(softplus_inverse(init_radiance)), true);
  }

  /// Builds from linear radiance values (H*W*3, row-major, top row first).
  static EnvironmentMap from_radiance(std::size_t height, std::size_t width, std::span<const double> radiance) {
    if (radiance.size() != height * width * 3) throw ad::ShapeError("radiance buffer size mismatch");
    EnvironmentMap env(height, width);
    auto raw = env.raw_.mutable_data();
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = static_cast<Real>(softplus_inverse(std::fmax(radiance[i], 1e-6)));
    }
    return env;
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  ad::Tensor<Real>& raw() { return raw_; }
  const ad::Tensor<Real>& raw() const { return raw_; }

  /// Differentiable radiance image [H, W, 3].
  ad::Tensor<Real> radiance() const { return ad::softplus(raw_); }

  std::vector<double> radiance_values() const {
    std::vector<double> out(raw_.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad::softplus_value(static_cast<double>(raw_[i]));
    return out;
  }

  /// Overwrites the stored values from linear radiance.
  void set_radiance(std::span<const double> radiance) {
    auto raw = raw_.mutable_data();
    if (radiance.size() != raw.size()) throw ad::ShapeError("radiance buffer size mismatch");
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = static_cast<Real>(softplus_inverse(std::fmax(radiance[i], 1e-6)));
    }
  }

  std::array<double, 3> lookup(const Vec3& direction) const {
    const auto values = radiance_values();
    return EquirectTap::at(direction, height_, width_).sample(std::span<const double>(values), width_);
  }

  template <class Other>
  EnvironmentMap<Other> cast() const {
    EnvironmentMap<Other> out;
    out.height_ = height_;
    out.width_ = width_;
    out.raw_ = raw_.template cast<Other>();
    return out;
  }
  EnvironmentMap aliased() const {
    EnvironmentMap out = *this;
    out.raw_ = raw_.alias();
    return out;
  }
  EnvironmentMap deep_copy() const {
    EnvironmentMap out = *this;
    out.raw_ = raw_.clone();
    return out;
  }

 private:
  template <class> friend class EnvironmentMap;
  std::size_t height_ = 0, width_ = 0;
  ad::Tensor<Real> raw_;
};

/// Scalar lookup into a radiance buffer (H*W*3).
inline std::array<double, 3> env_lookup(std::span<const double> radiance, std::size_t height, std::size_t width,
                                        const Vec3& direction) {
  return EquirectTap::at(direction, height, width).sample(radiance, width);
}

/// Unit direction through the center of texel (row, col).
inline Vec3 texel_direction(std::size_t row, std::size_t col, std::size_t height, std::size_t width) {
  const double u = (static_cast<double>(col) + 0.5) / static_cast<double>(width);
  const double v = (static_cast<double>(row) + 0.5) / static_cast<double>(height);
  const double theta = (u - 0.5) * 2.0 * M_PI;
  const double phi = v * M_PI;
  const double s = std::sin(phi);
  return {s * std::sin(theta), std::cos(phi), -s * std::cos(theta)};
}

}  // namespace mfield
