#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfield/io/dataset.hpp"
#include "mfield/render/camera.hpp"
#include "mfield/shading/envmap.hpp"

namespace mfield {

enum class OracleKind { kLambertianSphere, kMirrorSphere };

inline std::string_view to_string(OracleKind k) {
  return k == OracleKind::kLambertianSphere ? "lambertian_sphere" : "mirror_sphere";
}

inline OracleKind parse_oracle_kind(std::string_view s) {
  if (s == "lambertian_sphere") return OracleKind::kLambertianSphere;
  if (s == "mirror_sphere") return OracleKind::kMirrorSphere;
  throw std::invalid_argument("unknown oracle scene '" + std::string(s) + "'");
}

/// Smooth analytic sky: ambient + vertical gradient + a broad warm lobe.
struct Sky {
  std::array<double, 3> ambient{0.10, 0.10, 0.12};
  std::array<double, 3> zenith{0.35, 0.45, 0.60};
  std::array<double, 3> lobe{0.50, 0.40, 0.25};
  Vec3 lobe_direction = normalize(Vec3{0.5, 0.7, 0.3});
  double lobe_sharpness = 3.0;
  double intensity = 1.0;

  std::array<double, 3> operator()(const Vec3& d) const {
    const double up = 0.5 + 0.5 * d[1];
    const double l = std::exp(lobe_sharpness * (dot(d, lobe_direction) - 1.0));
    std::array<double, 3> out{};
    for (int c = 0; c < 3; ++c) out[c] = intensity * (ambient[c] + zenith[c] * up + lobe[c] * l);
    return out;
  }

  static Sky constant(double value) {
    Sky s;
    s.ambient = {value, value, value};
    s.zenith = {0, 0, 0};
    s.lobe = {0, 0, 0};
    return s;
  }
};

struct OracleParams {
  OracleKind kind = OracleKind::kLambertianSphere;
  std::array<double, 3> albedo{0.4, 0.3, 0.2};
  Vec3 center{0, 0, 0};
  double radius = 1.0;
  std::size_t train_views = 16, test_views = 4;
  std::size_t width = 128, height = 128;
  /// Wide enough that the 16 training views see most of the sky directly.
  double fov_x = std::numbers::pi / 2;
  double camera_distance = 3.0;
  std::size_t env_height = 32, env_width = 64;
  /// Quantize images through 8-bit sRGB, as they would be on disk.
  bool quantize = true;
  Sky sky;
};

struct OracleTruth {
  OracleKind kind;
  std::array<double, 3> albedo;
  double roughness;
  std::array<double, 3> f0;
  Vec3 center;
  double radius;
};

struct OracleScene {
  SceneDataset dataset;
  OracleTruth truth;
};

/// Nearest positive hit distance of a ray with a sphere.
inline std::optional<double> intersect_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  const Vec3 oc = o - c;
  const double b = dot(oc, d), cc = dot(oc, oc) - r * r;
  const double disc = b * b - cc;
  if (disc < 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  if (-b - s > 0.0) return -b - s;
  if (-b + s > 0.0) return -b + s;
  return std::nullopt;
}

/// Cosine-weighted irradiance integral (1/pi) * int L(w) max(0, n.w) dw by
/// midpoint quadrature over a latitude-longitude grid.
class IrradianceQuadrature {
 public:
  IrradianceQuadrature(const Sky& sky, std::size_t rows = 64, std::size_t cols = 128) {
    const double dth = std::numbers::pi / rows, dph = 2 * std::numbers::pi / cols;
    for (std::size_t i = 0; i < rows; ++i) {
      const double th = (i + 0.5) * dth;
      const double solid = std::sin(th) * dth * dph / std::numbers::pi;
      for (std::size_t j = 0; j < cols; ++j) {
        const double ph = (j + 0.5) * dph;
        const Vec3 w{std::sin(th) * std::cos(ph), std::cos(th), std::sin(th) * std::sin(ph)};
        const auto L = sky(w);
        dirs_.push_back(w);
        weighted_.push_back({L[0] * solid, L[1] * solid, L[2] * solid});
      }
    }
  }

  std::array<double, 3> operator()(const Vec3& n) const {
    std::array<double, 3> e{};
    for (std::size_t k = 0; k < dirs_.size(); ++k) {
      const double c = dot(n, dirs_[k]);
      if (c <= 0.0) continue;
      for (int ch = 0; ch < 3; ++ch) e[ch] += c * weighted_[k][ch];
    }
    return e;
  }

 private:
  std::vector<Vec3> dirs_;
  std::vector<std::array<double, 3>> weighted_;
};

/// Camera positions on a Fibonacci sphere.
inline std::vector<Vec3> fibonacci_sphere(std::size_t n, double radius) {
  std::vector<Vec3> out;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double phi = golden * static_cast<double>(i);
    out.push_back(Vec3{r * std::cos(phi), y, r * std::sin(phi)} * radius);
  }
  return out;
}

/// Renders one oracle view.
inline Frame render_oracle_view(const OracleParams& p, const Camera& cam, const IrradianceQuadrature& irradiance) {
  Frame f;
  f.camera = cam;
  const std::size_t n = cam.width * cam.height;
  f.rgb.assign(n * 3, 0.0);
  f.alpha.assign(n, 0.0);
  f.normal.assign(n * 3, 0.0);
  const Vec3 o = cam.origin();
  for (std::size_t y = 0; y < cam.height; ++y)
    for (std::size_t x = 0; x < cam.width; ++x) {
      const std::size_t px = y * cam.width + x;
      const Vec3 d = cam.direction(x, y);
      std::array<double, 3> color;
      if (auto t = intersect_sphere(o, d, p.center, p.radius)) {
        const Vec3 nrm = normalize(o + d * *t - p.center);
        if (p.kind == OracleKind::kLambertianSphere) {
          const auto e = irradiance(nrm);
          for (int c = 0; c < 3; ++c) color[c] = p.albedo[c] * e[c];
        } else {
          color = p.sky(normalize(d - nrm * (2.0 * dot(d, nrm))));
        }
        f.alpha[px] = 1.0;
        for (int c = 0; c < 3; ++c) f.normal[px * 3 + c] = nrm[c];
      } else {
        color = p.sky(d);
      }
      for (int c = 0; c < 3; ++c) {
        double v = color[c];
        if (p.quantize) v = srgb_to_linear(to_byte(linear_to_srgb(v)) / 255.0);
        f.rgb[px * 3 + c] = v;
      }
    }
  return f;
}

/// Ground-truth dataset for a sphere under the analytic sky. Views come from
/// one Fibonacci sequence; every k-th view goes to the test split.
inline OracleScene oracle_scene(const OracleParams& p) {
  OracleScene out;
  auto& ds = out.dataset;
  ds.name = std::string(to_string(p.kind));
  ds.fov_x = p.fov_x;
  ds.width = p.width;
  ds.height = p.height;
  const std::size_t total = p.train_views + p.test_views;
  const auto eyes = fibonacci_sphere(total, p.camera_distance);
  const IrradianceQuadrature irradiance(p.sky);
  std::size_t test_left = p.test_views;
  for (std::size_t i = 0; i < total; ++i) {
    const auto cam = Camera::look_at(p.center + eyes[i], p.center, {0, 1, 0}, p.fov_x, p.width, p.height);
    auto frame = render_oracle_view(p, cam, irradiance);
    frame.file_path = "r_" + std::to_string(i);
    const std::size_t stride = p.test_views ? total / p.test_views : total + 1;
    const bool is_test = test_left > 0 && i % stride == stride / 2;
    if (is_test) {
      --test_left;
      ds.test.push_back(std::move(frame));
    } else {
      ds.train.push_back(std::move(frame));
    }
  }
  EnvImage env;
  env.height = p.env_height;
  env.width = p.env_width;
  env.radiance.resize(env.height * env.width * 3);
  for (std::size_t i = 0; i < env.height; ++i)
    for (std::size_t j = 0; j < env.width; ++j) {
      const auto L = p.sky(texel_direction(i, j, env.height, env.width));
      for (int c = 0; c < 3; ++c) env.radiance[(i * env.width + j) * 3 + c] = L[c];
    }
  ds.envmap = env;
  const bool mirror = p.kind == OracleKind::kMirrorSphere;
  out.truth = {p.kind, mirror ? std::array<double, 3>{0, 0, 0} : p.albedo, mirror ? 0.0 : 1.0,
               mirror ? std::array<double, 3>{1, 1, 1} : std::array<double, 3>{0, 0, 0}, p.center, p.radius};
  return out;
}

}  // namespace mfield
