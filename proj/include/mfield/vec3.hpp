#pragma once

#include <array>
#include <cmath>

namespace mfield {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator-(const Vec3& a) { return {-a[0], -a[1], -a[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline Vec3 operator*(double s, const Vec3& a) { return a * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double length(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(const Vec3& a) { return a * (1.0 / length(a)); }
inline Vec3 reflect(const Vec3& wo, const Vec3& h) { return 2.0 * dot(wo, h) * h - wo; }

/// Orthonormal basis around a unit vector n (branchless construction).
inline void tangent_frame(const Vec3& n, Vec3& t1, Vec3& t2) {
  const double sign = std::copysign(1.0, n[2]);
  const double a = -1.0 / (sign + n[2]);
  const double b = n[0] * n[1] * a;
  t1 = {1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0]};
  t2 = {b, sign + n[1] * n[1] * a, -n[1]};
}

inline double angle_between_deg(const Vec3& a, const Vec3& b) {
  const double c = std::fmax(-1.0, std::fmin(1.0, dot(normalize(a), normalize(b))));
  return std::acos(c) * 180.0 / M_PI;
}

struct Aabb {
  Vec3 lo{-1.0, -1.0, -1.0};
  Vec3 hi{1.0, 1.0, 1.0};

  bool contains(const Vec3& p) const {
    for (int k = 0; k < 3; ++k) {
      if (p[k] < lo[k] || p[k] > hi[k]) return false;
    }
    return true;
  }

  /// Slab intersection; returns false on a miss. tnear is clamped to >= 0.
  bool intersect(const Vec3& origin, const Vec3& dir, double& tnear, double& tfar) const {
    double t0 = 0.0, t1 = 1e30;
    for (int k = 0; k < 3; ++k) {
      if (std::abs(dir[k]) < 1e-12) {
        if (origin[k] < lo[k] || origin[k] > hi[k]) return false;
        continue;
      }
      const double inv = 1.0 / dir[k];
      double a = (lo[k] - origin[k]) * inv;
      double b = (hi[k] - origin[k]) * inv;
      if (a > b) std::swap(a, b);
      t0 = std::fmax(t0, a);
      t1 = std::fmin(t1, b);
      if (t0 > t1) return false;
    }
    tnear = t0;
    tfar = t1;
    return true;
  }
};

}  // namespace mfield
