#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfield/vec3.hpp"

namespace mfield {

using Mat4 = std::array<double, 16>;  // row-major

inline Mat4 identity4() { return {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}; }

/// Pinhole camera; camera space is right-handed with -z forward and +y up.
struct Camera {
  Mat4 camera_to_world = identity4();
  double fov_x = 0.6911112070083618;  // radians
  std::size_t width = 0, height = 0;

  double focal() const { return 0.5 * static_cast<double>(width) / std::tan(0.5 * fov_x); }
  Vec3 origin() const { return {camera_to_world[3], camera_to_world[7], camera_to_world[11]}; }
  Vec3 rotate(const Vec3& v) const {
    const auto& m = camera_to_world;
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[4] * v[0] + m[5] * v[1] + m[6] * v[2],
            m[8] * v[0] + m[9] * v[1] + m[10] * v[2]};
  }

  /// World-space unit direction through the center of pixel (x, y).
  Vec3 direction(std::size_t x, std::size_t y) const {
    const double f = focal();
    const Vec3 d{(static_cast<double>(x) + 0.5 - 0.5 * static_cast<double>(width)) / f,
                 -(static_cast<double>(y) + 0.5 - 0.5 * static_cast<double>(height)) / f, -1.0};
    return normalize(rotate(d));
  }

  /// Largest deviation of the rotation block from orthonormality.
  double orthonormality_error() const {
    double worst = 0.0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        double d = 0.0;
        for (int k = 0; k < 3; ++k) d += camera_to_world[k * 4 + a] * camera_to_world[k * 4 + b];
        worst = std::max(worst, std::abs(d - (a == b ? 1.0 : 0.0)));
      }
    return worst;
  }

  /// Camera at `eye` looking at `target`.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_x, std::size_t width,
                        std::size_t height) {
    const Vec3 back = normalize(eye - target);
    Vec3 right = cross(up, back);
    if (length(right) < 1e-9) right = cross(Vec3{0, 0, 1}, back);
    right = normalize(right);
    const Vec3 true_up = cross(back, right);
    Camera c;
    c.camera_to_world = {right[0], true_up[0], back[0], eye[0], right[1], true_up[1], back[1], eye[1],
                         right[2], true_up[2], back[2], eye[2], 0, 0, 0, 1};
    c.fov_x = fov_x;
    c.width = width;
    c.height = height;
    return c;
  }
};

/// Rays with per-ray RNG stream keys (normally the global pixel id).
struct RayBatch {
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;
  std::vector<std::uint64_t> keys;

  std::size_t size() const { return origins.size(); }
  void push(const Vec3& o, const Vec3& d, std::uint64_t key) {
    origins.push_back(o);
    directions.push_back(d);
    keys.push_back(key);
  }
};

/// Rays through the centers of the given pixels (linear index y * width + x).
/// `key_offset` is added to the pixel index to form each ray's stream key.
inline RayBatch generate_rays(const Camera& camera, std::span<const std::size_t> pixels,
                              std::uint64_t key_offset = 0) {
  RayBatch batch;
  const std::size_t total = camera.width * camera.height;
  const Vec3 o = camera.origin();
  for (std::size_t p : pixels) {
    if (p >= total) {
      throw std::out_of_range("pixel " + std::to_string(p) + " outside " + std::to_string(camera.width) + "x" +
                              std::to_string(camera.height) + " image");
    }
    batch.push(o, camera.direction(p % camera.width, p / camera.width), key_offset + p);
  }
  return batch;
}

}  // namespace mfield
