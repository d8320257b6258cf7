#pragma once

#include <array>
#include <cmath>

#include "mfield/ad/ops.hpp"
#include "mfield/ad/rng.hpp"
#include "mfield/vec3.hpp"

// Microfacet reflectance: diffuse + Fresnel-gated Cook-Torrance specular with
// a Trowbridge-Reitz distribution and single-direction Smith masking.
//
//   f = rho / pi * (1 - Fr(h)) + Fr(h) * f_s
//   Fr = F0 + (1 - F0) (1 - h.wo)^5
//   f_s = D(h) G1(wo) g / (4 (n.wo) (n.wi))

namespace mfield::shading {

inline constexpr double kAlphaMin = 1e-3;
inline constexpr double kDenominatorFloor = 1e-6;

using Rgb = std::array<double, 3>;

inline double fresnel(double f0, double cos_theta) {
  const double c = std::fmin(1.0, std::fmax(0.0, cos_theta));
  return f0 + (1.0 - f0) * std::pow(1.0 - c, 5.0);
}

inline Rgb fresnel(const Rgb& f0, double cos_theta) {
  return {fresnel(f0[0], cos_theta), fresnel(f0[1], cos_theta), fresnel(f0[2], cos_theta)};
}

/// Trowbridge-Reitz normal distribution.
inline double ndf(double alpha, double n_dot_h) {
  if (n_dot_h <= 0.0) return 0.0;
  const double a2 = std::pow(std::fmax(alpha, kAlphaMin), 2.0);
  const double t = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
  return a2 / (M_PI * t * t);
}

/// Smith masking for one direction; zero below the horizon.
inline double smith_g1(double n_dot_v, double alpha) {
  if (n_dot_v <= 0.0) return 0.0;
  const double a2 = std::pow(std::fmax(alpha, kAlphaMin), 2.0);
  const double c = std::fmin(n_dot_v, 1.0);
  return 2.0 * c / (c + std::sqrt(a2 + (1.0 - a2) * c * c));
}

struct BrdfQuery {
  Vec3 wo{}, wi{}, n{};
  Rgb albedo{};
  double roughness = 0.5;
  Rgb f0{};

  Vec3 half() const { return normalize(wo + wi); }
};

inline double specular(const BrdfQuery& q, double g) {
  const double n_wo = dot(q.n, q.wo), n_wi = dot(q.n, q.wi);
  if (n_wo <= 0.0 || n_wi <= 0.0) return 0.0;
  const Vec3 h = q.half();
  const double denom = std::fmax(4.0 * n_wo * n_wi, kDenominatorFloor);
  return ndf(q.roughness, dot(q.n, h)) * smith_g1(n_wo, q.roughness) * g / denom;
}

inline Rgb brdf(const BrdfQuery& q, double g) {
  const double n_wo = dot(q.n, q.wo), n_wi = dot(q.n, q.wi);
  if (n_wo <= 0.0 || n_wi <= 0.0) return {0.0, 0.0, 0.0};
  const Vec3 h = q.half();
  const Rgb fr = fresnel(q.f0, dot(h, q.wo));
  const double fs = specular(q, g);
  Rgb out;
  for (int c = 0; c < 3; ++c) out[c] = q.albedo[c] / M_PI * (1.0 - fr[c]) + fr[c] * fs;
  return out;
}

struct DirectionSample {
  Vec3 wi{};
  double pdf = 0.0;
  bool valid = false;
};

/// Half vector in the local frame from (u1, u2), distributed as D(h)(n.h).
inline Vec3 sample_half_local(double alpha, double u1, double u2) {
  const double a2 = std::pow(std::fmax(alpha, kAlphaMin), 2.0);
  const double cos2 = (1.0 - u1) / (1.0 + (a2 - 1.0) * u1);
  const double cos_t = std::sqrt(cos2);
  const double sin_t = std::sqrt(std::fmax(0.0, 1.0 - cos2));
  const double phi = 2.0 * M_PI * u2;
  return {sin_t * std::cos(phi), sin_t * std::sin(phi), cos_t};
}

/// NDF importance sampling: h ~ D(h)(n.h), wi = reflect(wo, h),
/// pdf(wi) = D (n.h) / (4 h.wo). Below-horizon results carry zero weight.
inline DirectionSample sample_specular(const Vec3& n, const Vec3& wo, double alpha, Rng& rng) {
  const double u1 = rng.uniform(), u2 = rng.uniform();
  const Vec3 hl = sample_half_local(alpha, u1, u2);
  Vec3 t1, t2;
  tangent_frame(n, t1, t2);
  const Vec3 h = normalize(t1 * hl[0] + t2 * hl[1] + n * hl[2]);
  DirectionSample s;
  const double h_wo = dot(h, wo);
  if (h_wo <= 0.0) return s;
  s.wi = reflect(wo, h);
  if (dot(n, s.wi) <= 0.0) return s;
  const double n_h = dot(n, h);
  s.pdf = ndf(alpha, n_h) * n_h / (4.0 * h_wo);
  s.valid = s.pdf > 0.0;
  return s;
}

/// Cosine-weighted hemisphere direction in the local frame.
inline Vec3 sample_cosine_local(double u1, double u2) {
  const double r = std::sqrt(u1);
  const double phi = 2.0 * M_PI * u2;
  return {r * std::cos(phi), r * std::sin(phi), std::sqrt(std::fmax(0.0, 1.0 - u1))};
}

// Differentiable counterparts over per-sample columns. Scalars are [n, 1],
// colors and directions [n, 3].
namespace tensor {

template <class Real>
ad::Tensor<Real> fresnel(const ad::Tensor<Real>& f0, const ad::Tensor<Real>& cos_theta) {
  const auto c = ad::clamp(cos_theta, Real(0), Real(1));
  const auto k = ad::pow(Real(1) - c, Real(5));
  return f0 + (Real(1) - f0) * k;
}

template <class Real>
ad::Tensor<Real> positive_mask(const ad::Tensor<Real>& x) {
  std::vector<Real> m(x.numel());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = x[i] > Real(0) ? Real(1) : Real(0);
  return ad::Tensor<Real>::from(x.shape(), std::move(m));
}

template <class Real>
ad::Tensor<Real> ndf(const ad::Tensor<Real>& alpha, const ad::Tensor<Real>& n_dot_h) {
  const auto a2 = ad::pow(ad::clamp(alpha, Real(kAlphaMin), Real(1e30)), Real(2));
  const auto t = n_dot_h * n_dot_h * (a2 - Real(1)) + Real(1);
  return a2 / (Real(M_PI) * t * t) * positive_mask(n_dot_h);
}

template <class Real>
ad::Tensor<Real> smith_g1(const ad::Tensor<Real>& n_dot_v, const ad::Tensor<Real>& alpha) {
  const auto a2 = ad::pow(ad::clamp(alpha, Real(kAlphaMin), Real(1e30)), Real(2));
  // Back-facing rows are clamped before the division: for n.v near -1 the
  // denominator cancels to 0 in float and the mask alone would keep the NaN.
  const auto c = ad::clamp(n_dot_v, Real(0), Real(1));
  const auto root = ad::sqrt(a2 + (Real(1) - a2) * c * c);
  return Real(2) * c / (c + root) * positive_mask(n_dot_v);
}

/// Rows of t1, t2 spanning the tangent plane of unit normals n.
template <class Real>
void tangent_frame(const ad::Tensor<Real>& n, ad::Tensor<Real>& t1, ad::Tensor<Real>& t2) {
  std::vector<Real> sign(n.rows());
  for (std::size_t i = 0; i < sign.size(); ++i) sign[i] = n.at(i, 2) >= Real(0) ? Real(1) : Real(-1);
  const auto s = ad::Tensor<Real>::from({n.rows(), 1}, std::move(sign));
  const auto nx = ad::col(n, 0), ny = ad::col(n, 1), nz = ad::col(n, 2);
  const auto a = Real(-1) / (s + nz);
  const auto b = nx * ny * a;
  t1 = ad::concat_cols(std::vector{Real(1) + s * nx * nx * a, s * b, -(s * nx)});
  t2 = ad::concat_cols(std::vector{b, s + ny * ny * a, -ny});
}

/// Local (x, y, z) columns mapped to world space in the frame of n.
template <class Real>
ad::Tensor<Real> to_world(const ad::Tensor<Real>& t1, const ad::Tensor<Real>& t2, const ad::Tensor<Real>& n,
                          const ad::Tensor<Real>& x, const ad::Tensor<Real>& y, const ad::Tensor<Real>& z) {
  return t1 * x + t2 * y + n * z;
}

}  // namespace tensor

}  // namespace mfield::shading
