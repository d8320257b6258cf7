#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "mfield/ad/ops.hpp"
#include "mfield/ad/rng.hpp"
#include "mfield/fields/scene_model.hpp"
#include "mfield/render/camera.hpp"
#include "mfield/shading/envmap.hpp"
#include "mfield/shading/microfacet.hpp"

namespace mfield {

struct RenderConfig {
  std::size_t samples_per_ray = 128;
  std::size_t diffuse_samples = 16;
  std::size_t specular_samples = 4;
  std::size_t bounces = 1;
  /// Samples whose compositing weight is at or below this are not shaded.
  double weight_threshold = 1e-4;
  std::size_t workers = 1;
  std::size_t tile_size = 16;
  /// Secondary rays for bounces > 1 march this many samples.
  std::size_t secondary_samples = 32;
};

/// Per-ray outputs. Material and normal buffers are w-weighted sums.
template <class Real>
struct RenderResult {
  ad::Tensor<Real> rgb;        // [n, 3] linear, unclamped
  ad::Tensor<Real> opacity;    // [n, 1]
  ad::Tensor<Real> normal;     // [n, 3], non-degenerate samples only
  ad::Tensor<Real> albedo;     // [n, 3]
  ad::Tensor<Real> roughness;  // [n, 1]
  ad::Tensor<Real> f0;         // [n, 3]
  ad::Tensor<Real> background; // [n, 3] env radiance along each ray

  // Shaded samples, in ray order.
  ad::Tensor<Real> sample_weight;   // [s, 1]
  ad::Tensor<Real> sample_normal;   // [s, 3]
  std::vector<std::size_t> sample_ray;
  std::vector<bool> sample_degenerate;
  std::vector<std::size_t> marched;  // samples taken per ray
};

/// Volume-rendering weights w_j = T_j (1 - exp(-tau_j)), T_j = exp(-sum_{k<j} tau_k),
/// within consecutive row ranges [offsets[r], offsets[r+1]) of tau [m, 1].
template <class Real>
ad::Tensor<Real> composite_weights(const ad::Tensor<Real>& tau, std::vector<std::size_t> offsets) {
  if (tau.cols() != 1 || offsets.empty() || offsets.back() != tau.rows()) {
    throw ad::ShapeError("composite_weights expects [m, 1] and covering offsets");
  }
  const std::size_t m = tau.rows();
  std::vector<Real> w(m);
  const auto tv = tau.data();
  for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
    double acc = 0.0;
    for (std::size_t j = offsets[r]; j < offsets[r + 1]; ++j) {
      const double t = static_cast<double>(tv[j]);
      w[j] = static_cast<Real>(std::exp(-acc) * -std::expm1(-t));
      acc += t;
    }
  }
  return ad::make_result<Real>({m, 1}, std::move(w), "composite_weights", {tau},
                               [offsets = std::move(offsets)](ad::detail::Node<Real>& self) {
                                 // d w_j / d tau_k = -w_j (k < j), T_{j+1} (k = j).
                                 Real* g = ad::detail::parent_grad(self, 0);
                                 const auto& tv = *self.parents[0]->value;
                                 const auto& wv = *self.value;
                                 for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
                                   const std::size_t b = offsets[r], e = offsets[r + 1];
                                   double acc = 0.0;
                                   for (std::size_t j = b; j < e; ++j) acc += tv[j];
                                   double suffix = 0.0;  // sum_{j>k} g_j w_j
                                   for (std::size_t k = e; k-- > b;) {
                                     acc -= tv[k];
                                     const double t_next = std::exp(-(acc + static_cast<double>(tv[k])));
                                     g[k] += static_cast<Real>(self.grad[k] * t_next - suffix);
                                     suffix += static_cast<double>(self.grad[k]) * static_cast<double>(wv[k]);
                                   }
                                 }
                               });
}

namespace detail {

template <class Real>
ad::Tensor<Real> constant_rows(const std::vector<Vec3>& v) {
  std::vector<Real> out(v.size() * 3);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int k = 0; k < 3; ++k) out[i * 3 + k] = static_cast<Real>(v[i][k]);
  return ad::Tensor<Real>::from({v.size(), 3}, std::move(out));
}

template <class Real>
ad::Tensor<Real> column(std::vector<Real> v) {
  const std::size_t n = v.size();
  return ad::Tensor<Real>::from({n, 1}, std::move(v));
}

inline std::uint64_t sample_stream(std::uint64_t seed, std::uint64_t key, std::size_t j) {
  return mix64(seed ^ mix64(key * 0x100000001b3ULL + j));
}

}  // namespace detail

template <class Real>
RenderResult<Real> render_rays(const SceneModel<Real>& model, const RayBatch& rays, const RenderConfig& config,
                               std::uint64_t seed);

namespace detail {

/// Outgoing radiance toward wo at shaded points: cosine-sampled diffuse plus
/// NDF-sampled specular, all through the graph.
template <class Real>
ad::Tensor<Real> shade(const SceneModel<Real>& model, const ad::Tensor<Real>& env_radiance,
                       const std::vector<Vec3>& positions, const std::vector<Vec3>& wo_values,
                       const ad::Tensor<Real>& n, const Material<Real>& mat, const std::vector<std::uint64_t>& streams,
                       const RenderConfig& config, std::uint64_t seed) {
  using ad::Tensor;
  const std::size_t S = positions.size();
  const std::size_t Kd = config.diffuse_samples, Ks = config.specular_samples;

  Tensor<Real> t1, t2;
  shading::tensor::tangent_frame(n, t1, t2);
  const auto wo = constant_rows<Real>(wo_values);

  // Uniforms: per point, Kd pairs for diffuse then Ks pairs for specular.
  std::vector<Real> dx(S * Kd), dy(S * Kd), dz(S * Kd);
  std::vector<Real> u1(S * Ks), cphi(S * Ks), sphi(S * Ks);
  for (std::size_t s = 0; s < S; ++s) {
    Rng rng(streams[s], "shade");
    for (std::size_t k = 0; k < Kd; ++k) {
      const double a = rng.uniform(), b = rng.uniform();
      const Vec3 l = shading::sample_cosine_local(a, b);
      dx[s * Kd + k] = static_cast<Real>(l[0]);
      dy[s * Kd + k] = static_cast<Real>(l[1]);
      dz[s * Kd + k] = static_cast<Real>(l[2]);
    }
    for (std::size_t k = 0; k < Ks; ++k) {
      const double a = rng.uniform(), b = rng.uniform();
      u1[s * Ks + k] = static_cast<Real>(a);
      cphi[s * Ks + k] = static_cast<Real>(std::cos(2.0 * M_PI * b));
      sphi[s * Ks + k] = static_cast<Real>(std::sin(2.0 * M_PI * b));
    }
  }

  Tensor<Real> radiance;
  if (Kd > 0) {
    const auto nd = ad::repeat_rows(n, Kd);
    const auto wi = ad::repeat_rows(t1, Kd) * column(std::move(dx)) + ad::repeat_rows(t2, Kd) * column(std::move(dy)) +
                    nd * column(std::move(dz));
    const auto wo_d = ad::repeat_rows(wo, Kd);
    const auto light = env_lookup(env_radiance, wi);
    const auto h = ad::normalize3(wo_d + wi);
    const auto fr = shading::tensor::fresnel(ad::repeat_rows(mat.f0, Kd), ad::dot3(h, wo_d));
    radiance = mat.albedo * ad::group_mean((Real(1) - fr) * light, Kd);
  }

  if (Ks > 0) {
    const auto ns = ad::repeat_rows(n, Ks);
    const auto wo_s = ad::repeat_rows(wo, Ks);
    const auto alpha = ad::repeat_rows(mat.roughness, Ks);
    const auto a2 = ad::pow(ad::clamp(alpha, Real(shading::kAlphaMin), Real(1e30)), Real(2));
    const auto u = column(std::move(u1));
    const auto cos2 = (Real(1) - u) / (Real(1) + (a2 - Real(1)) * u);
    const auto cos_t = ad::sqrt(cos2);
    const auto sin_t = ad::sqrt(ad::clamp(Real(1) - cos2, Real(0), Real(1)));
    const auto h = ad::repeat_rows(t1, Ks) * (sin_t * column(std::move(cphi))) +
                   ad::repeat_rows(t2, Ks) * (sin_t * column(std::move(sphi))) + ns * cos_t;
    const auto h_wo = ad::dot3(h, wo_s);
    const auto wi = Real(2) * h_wo * h - wo_s;
    const auto n_wi = ad::dot3(ns, wi);
    const auto n_wo = ad::dot3(ns, wo_s);

    const std::size_t rows = S * Ks;
    std::vector<Real> valid(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      valid[i] = (h_wo[i] > Real(0) && n_wi[i] > Real(0) && n_wo[i] > Real(0)) ? Real(1) : Real(0);
    }

    Tensor<Real> light;
    if (config.bounces > 1) {
      // Secondary marching along detached directions.
      RayBatch secondary;
      const auto wv = wi.data();
      for (std::size_t i = 0; i < rows; ++i) {
        Vec3 d{wv[i * 3], wv[i * 3 + 1], wv[i * 3 + 2]};
        const double len = length(d);
        d = len > 0.0 ? d * (1.0 / len) : wo_values[i / Ks];
        secondary.push(positions[i / Ks] + d * 1e-3, d, mix64(streams[i / Ks] + i % Ks));
      }
      RenderConfig next = config;
      next.bounces = config.bounces - 1;
      next.samples_per_ray = config.secondary_samples;
      light = render_rays(model, secondary, next, mix64(seed + 1)).rgb;
    } else {
      light = env_lookup(env_radiance, wi);
    }

    // f_s (n.wi) / pdf with D cancelled:
    //   Fr G1 g (n.wi) 4 (h.wo) / (max(4 (n.wo)(n.wi), floor) (n.h))
    const auto fr = shading::tensor::fresnel(ad::repeat_rows(mat.f0, Ks), h_wo);
    const auto g1 = shading::tensor::smith_g1(n_wo, alpha);
    const auto g = model.specular_factor(ad::concat_cols(std::vector{n_wi, n_wo, cos_t}));
    const auto denom = ad::clamp(Real(4) * n_wo * n_wi, Real(shading::kDenominatorFloor), Real(1e30)) *
                       ad::clamp(cos_t, Real(1e-6), Real(1));
    const auto scalar = g1 * g * n_wi * (Real(4) * h_wo) / denom * column(std::move(valid));
    const auto specular = ad::group_mean(fr * light * scalar, Ks);
    radiance = radiance.defined() ? radiance + specular : specular;
  }
  if (!radiance.defined()) radiance = Tensor<Real>::zeros({S, 3});
  return radiance;
}

}  // namespace detail

/// Renders a batch of rays through the model. Sample placement and shading
/// randomness come from per-ray streams keyed by (seed, rays.keys[i]).
template <class Real>
RenderResult<Real> render_rays(const SceneModel<Real>& model, const RayBatch& rays, const RenderConfig& config,
                               std::uint64_t seed) {
  using ad::Tensor;
  const std::size_t n = rays.size();
  const std::size_t N = config.samples_per_ray;
  const Aabb& box = model.density_grid().box();

  std::vector<Vec3> positions;
  std::vector<Real> deltas;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> sample_ray;
  std::vector<std::size_t> sample_index;
  positions.reserve(n * N);
  RenderResult<Real> out;
  out.marched.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    double t0 = 0.0, t1 = 0.0;
    if (N > 0 && box.intersect(rays.origins[r], rays.directions[r], t0, t1) && t1 > t0) {
      const double delta = (t1 - t0) / static_cast<double>(N);
      Rng rng(seed, "march", rays.keys[r]);
      for (std::size_t j = 0; j < N; ++j) {
        const double t = t0 + (static_cast<double>(j) + rng.uniform()) * delta;
        positions.push_back(rays.origins[r] + rays.directions[r] * t);
        deltas.push_back(static_cast<Real>(delta));
        sample_ray.push_back(r);
        sample_index.push_back(j);
      }
      out.marched[r] = N;
    }
    offsets.push_back(positions.size());
  }

  const auto env_radiance = model.envmap().radiance();
  out.background = env_lookup(env_radiance, detail::constant_rows<Real>(rays.directions));

  const std::size_t M = positions.size();
  Tensor<Real> weights, transmittance;
  if (M > 0) {
    const auto tau = model.density(positions) * detail::column(std::move(deltas));
    weights = composite_weights(tau, offsets);
    transmittance = ad::exp(-ad::segment_sum(tau, offsets));
  } else {
    transmittance = Tensor<Real>::full({n, 1}, Real(1));
  }
  out.opacity = Real(1) - transmittance;

  // Select samples to shade.
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < M; ++i) {
    if (static_cast<double>(weights[i]) > config.weight_threshold) selected.push_back(i);
  }
  const std::size_t S = selected.size();
  std::vector<std::size_t> shade_offsets(n + 1, 0);
  for (std::size_t i : selected) ++shade_offsets[sample_ray[i] + 1];
  for (std::size_t r = 0; r < n; ++r) shade_offsets[r + 1] += shade_offsets[r];

  Tensor<Real> radiance_sum;
  if (S > 0) {
    std::vector<Vec3> pts(S), wo(S);
    std::vector<std::uint64_t> streams(S);
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t i = selected[s], r = sample_ray[i];
      pts[s] = positions[i];
      wo[s] = rays.directions[r] * -1.0;
      streams[s] = detail::sample_stream(seed, rays.keys[r], sample_index[i]);
      out.sample_ray.push_back(r);
    }
    const auto w = ad::index_rows(weights, selected);
    const auto nf = model.normals(pts, wo);
    const auto mat = model.material(pts);
    const auto radiance = detail::shade(model, env_radiance, pts, wo, nf.normal, mat, streams, config, seed);

    std::vector<Real> defined(S);
    for (std::size_t s = 0; s < S; ++s) defined[s] = nf.degenerate[s] ? Real(0) : Real(1);
    const auto wd = w * detail::column(std::move(defined));

    radiance_sum = ad::segment_sum(w * radiance, shade_offsets);
    out.normal = ad::segment_sum(wd * nf.normal, shade_offsets);
    out.albedo = ad::segment_sum(w * mat.albedo, shade_offsets);
    out.roughness = ad::segment_sum(w * mat.roughness, shade_offsets);
    out.f0 = ad::segment_sum(w * mat.f0, shade_offsets);
    out.sample_weight = w;
    out.sample_normal = nf.normal;
    out.sample_degenerate = nf.degenerate;
  } else {
    radiance_sum = Tensor<Real>::zeros({n, 3});
    out.normal = Tensor<Real>::zeros({n, 3});
    out.albedo = Tensor<Real>::zeros({n, 3});
    out.roughness = Tensor<Real>::zeros({n, 1});
    out.f0 = Tensor<Real>::zeros({n, 3});
    out.sample_weight = Tensor<Real>::zeros({0, 1});
    out.sample_normal = Tensor<Real>::zeros({0, 3});
  }
  out.rgb = radiance_sum + transmittance * out.background;
  return out;
}

/// Full-image buffers in double precision, row-major.
struct RenderedImage {
  std::size_t width = 0, height = 0;
  std::vector<double> rgb;        // linear, 3 per pixel
  std::vector<double> opacity;    // 1 per pixel
  std::vector<double> normal;     // unit where normal_defined
  std::vector<bool> normal_defined;
  std::vector<double> albedo, roughness, f0;  // divided by opacity where > 0
  std::vector<std::size_t> sample_count;
};

/// Renders a full image, tile-parallel. Every pixel owns its random streams,
/// so the result does not depend on the worker count.
template <class Real>
RenderedImage render_image(const SceneModel<Real>& model, const Camera& camera, const RenderConfig& config,
                           std::uint64_t seed, std::uint64_t key_offset = 0) {
  const std::size_t W = camera.width, H = camera.height, T = std::max<std::size_t>(config.tile_size, 1);
  RenderedImage img;
  img.width = W;
  img.height = H;
  img.rgb.assign(W * H * 3, 0.0);
  img.opacity.assign(W * H, 0.0);
  img.normal.assign(W * H * 3, 0.0);
  img.normal_defined.assign(W * H, false);
  img.albedo.assign(W * H * 3, 0.0);
  img.roughness.assign(W * H, 0.0);
  img.f0.assign(W * H * 3, 0.0);
  img.sample_count.assign(W * H, 0);

  const std::size_t tiles_x = (W + T - 1) / T, tiles_y = (H + T - 1) / T;
  const std::size_t tiles = tiles_x * tiles_y;
  std::atomic<std::size_t> next{0};
  // std::vector<bool> packs bits, so concurrent writes to it race; flags are
  // collected per tile and merged after the join.
  std::vector<std::vector<std::pair<std::size_t, bool>>> defined_by_tile(tiles);

  auto work = [&]() {
    ad::NoGradGuard guard;
    for (std::size_t t = next++; t < tiles; t = next++) {
      const std::size_t tx = t % tiles_x, ty = t / tiles_x;
      std::vector<std::size_t> pixels;
      for (std::size_t y = ty * T; y < std::min(H, ty * T + T); ++y)
        for (std::size_t x = tx * T; x < std::min(W, tx * T + T); ++x) pixels.push_back(y * W + x);
      const auto rays = generate_rays(camera, pixels, key_offset);
      const auto res = render_rays(model, rays, config, seed);
      for (std::size_t i = 0; i < pixels.size(); ++i) {
        const std::size_t p = pixels[i];
        const double o = res.opacity[i];
        img.opacity[p] = o;
        img.sample_count[p] = res.marched[i];
        img.roughness[p] = o > 0.0 ? res.roughness[i] / o : 0.0;
        Vec3 nrm{};
        for (int c = 0; c < 3; ++c) {
          img.rgb[p * 3 + c] = res.rgb.at(i, c);
          img.albedo[p * 3 + c] = o > 0.0 ? res.albedo.at(i, c) / o : 0.0;
          img.f0[p * 3 + c] = o > 0.0 ? res.f0.at(i, c) / o : 0.0;
          nrm[c] = res.normal.at(i, c);
        }
        const double len = length(nrm);
        const bool ok = len > 1e-12;
        defined_by_tile[t].emplace_back(p, ok);
        if (ok)
          for (int c = 0; c < 3; ++c) img.normal[p * 3 + c] = nrm[c] / len;
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, tiles));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < workers; ++k) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (const auto& tile : defined_by_tile)
    for (const auto& [p, ok] : tile) img.normal_defined[p] = ok;
  return img;
}

}  // namespace mfield
