#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mfield/ad/params.hpp"
#include "mfield/ad/rng.hpp"
#include "mfield/fields/scene_model.hpp"

namespace mfield {

enum class PerturbTarget { kAlbedo, kRoughness, kF0, kDensity, kEnvmap };
enum class PerturbDirection { kUnder, kOver, kNone };

inline std::string_view to_string(PerturbTarget t) {
  switch (t) {
    case PerturbTarget::kAlbedo: return "albedo";
    case PerturbTarget::kRoughness: return "roughness";
    case PerturbTarget::kF0: return "f0";
    case PerturbTarget::kDensity: return "density";
    case PerturbTarget::kEnvmap: return "envmap";
  }
  return "?";
}

inline std::string_view to_string(PerturbDirection d) {
  switch (d) {
    case PerturbDirection::kUnder: return "under";
    case PerturbDirection::kOver: return "over";
    case PerturbDirection::kNone: return "n/a";
  }
  return "?";
}

inline PerturbTarget parse_target(std::string_view s) {
  for (auto t : {PerturbTarget::kAlbedo, PerturbTarget::kRoughness, PerturbTarget::kF0, PerturbTarget::kDensity,
                 PerturbTarget::kEnvmap}) {
    if (to_string(t) == s) return t;
  }
  throw std::invalid_argument("unknown perturbation target '" + std::string(s) + "'");
}

inline PerturbDirection parse_direction(std::string_view s) {
  for (auto d : {PerturbDirection::kUnder, PerturbDirection::kOver, PerturbDirection::kNone}) {
    if (to_string(d) == s) return d;
  }
  throw std::invalid_argument("unknown perturbation direction '" + std::string(s) + "'");
}

inline GroupName group_of(PerturbTarget t) { return parse_group(to_string(t)); }

struct PerturbationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// One manipulation: a post-sigmoid multiplier on a material head, Gaussian
/// noise on the density coefficients, or a Gaussian blur of the environment.
struct PerturbationSpec {
  PerturbTarget target = PerturbTarget::kAlbedo;
  PerturbDirection direction = PerturbDirection::kNone;
  double multiplier = 1.0;
  double sigma_d = 0.0;
  std::uint64_t seed = 0;
  std::size_t blur_size = 1;
  double blur_sigma = 1.0;

  static PerturbationSpec scale(PerturbTarget t, double m) {
    PerturbationSpec s;
    s.target = t;
    s.multiplier = m;
    s.direction = m < 1.0 ? PerturbDirection::kUnder : m > 1.0 ? PerturbDirection::kOver : PerturbDirection::kNone;
    s.validate();
    return s;
  }
  static PerturbationSpec noise(double sigma_d, std::uint64_t seed = 0) {
    PerturbationSpec s;
    s.target = PerturbTarget::kDensity;
    s.sigma_d = sigma_d;
    s.seed = seed;
    s.validate();
    return s;
  }
  static PerturbationSpec blur(std::size_t size, double sigma) {
    PerturbationSpec s;
    s.target = PerturbTarget::kEnvmap;
    s.blur_size = size;
    s.blur_sigma = sigma;
    s.validate();
    return s;
  }

  bool is_material() const {
    return target == PerturbTarget::kAlbedo || target == PerturbTarget::kRoughness || target == PerturbTarget::kF0;
  }

  void validate() const {
    if (is_material()) {
      if (!(multiplier >= 0.0) || !std::isfinite(multiplier)) throw PerturbationError("multiplier must be finite and >= 0");
      if (sigma_d != 0.0 || blur_size != 1) throw PerturbationError("material targets take only a multiplier");
    } else if (target == PerturbTarget::kDensity) {
      if (!(sigma_d >= 0.0) || !std::isfinite(sigma_d)) throw PerturbationError("sigma_d must be finite and >= 0");
      if (multiplier != 1.0 || blur_size != 1) throw PerturbationError("density takes only gaussian noise");
    } else {
      if (blur_size == 0 || blur_size % 2 == 0) throw PerturbationError("blur size must be odd and >= 1");
      if (!(blur_sigma > 0.0)) throw PerturbationError("blur sigma must be > 0");
      if (multiplier != 1.0 || sigma_d != 0.0) throw PerturbationError("envmap takes only a gaussian blur");
    }
  }

  /// Short description, e.g. "albedo x1000", "density N(0,1.5)", "envmap G(301,300)".
  std::string describe() const {
    auto num = [](double v) {
      std::string s = std::to_string(v);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return s;
    };
    switch (target) {
      case PerturbTarget::kDensity: return "density N(0," + num(sigma_d) + ")";
      case PerturbTarget::kEnvmap: return "envmap G(" + std::to_string(blur_size) + "," + num(blur_sigma) + ")";
      default: return std::string(to_string(target)) + " x" + num(multiplier);
    }
  }

  /// Row label used in reports: "Albedo↓", "Rough↑", "F0↓", "Density", "Envmap".
  std::string label() const {
    const char* arrow = direction == PerturbDirection::kUnder ? "\xE2\x86\x93"
                        : direction == PerturbDirection::kOver ? "\xE2\x86\x91"
                                                               : "";
    switch (target) {
      case PerturbTarget::kAlbedo: return std::string("Albedo") + arrow;
      case PerturbTarget::kRoughness: return std::string("Rough") + arrow;
      case PerturbTarget::kF0: return std::string("F0") + arrow;
      case PerturbTarget::kDensity: return "Density";
      case PerturbTarget::kEnvmap: return "Envmap";
    }
    return "?";
  }
};

inline double apply_multiplier(double value, double m) { return std::fmin(std::fmax(m * value, 0.0), 1.0); }

/// Adds N(0, sigma_d^2) to every plane and line coefficient, one stream per tensor.
template <class Real>
void perturb_density(VMGrid<Real>& grid, double sigma_d, std::uint64_t seed) {
  if (sigma_d == 0.0) return;
  auto tensors = grid.mutable_tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Rng rng(seed, "density-noise", k);
    for (auto& v : tensors[k]->mutable_data()) v = static_cast<Real>(static_cast<double>(v) + rng.normal(0.0, sigma_d));
  }
}

/// Normalized 1D Gaussian taps, size odd.
inline std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  if (size == 0 || size % 2 == 0) throw PerturbationError("kernel size must be odd");
  const long half = static_cast<long>(size / 2);
  std::vector<double> k(size);
  double total = 0.0;
  for (long i = -half; i <= half; ++i) {
    k[i + half] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    total += k[i + half];
  }
  for (auto& v : k) v /= total;
  return k;
}

/// Separable Gaussian blur of an H x W x 3 image: longitude wraps, latitude
/// replicates the pole rows.
inline std::vector<double> blur_envmap(std::span<const double> image, std::size_t height, std::size_t width,
                                       std::size_t size, double sigma) {
  if (image.size() != height * width * 3) throw PerturbationError("envmap buffer size mismatch");
  if (size == 1) return {image.begin(), image.end()};
  const auto k = gaussian_kernel(size, sigma);
  const long half = static_cast<long>(size / 2);
  const long W = static_cast<long>(width), H = static_cast<long>(height);
  std::vector<double> tmp(image.size()), out(image.size());
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long t = -half; t <= half; ++t) {
          const long jj = ((j + t) % W + W) % W;
          acc += k[t + half] * image[(i * W + jj) * 3 + c];
        }
        tmp[(i * W + j) * 3 + c] = acc;
      }
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long t = -half; t <= half; ++t) {
          const long ii = std::min(std::max(i + t, 0L), H - 1);
          acc += k[t + half] * tmp[(ii * W + j) * 3 + c];
        }
        out[(i * W + j) * 3 + c] = acc;
      }
  return out;
}

/// Returns a view of `model` with `spec` applied. Multipliers become material
/// hooks; noise and blur act on fresh copies of the targeted group, so every
/// other tensor is shared with (and bit-identical to) the baseline.
template <class Real>
SceneModel<Real> attach(const SceneModel<Real>& model, const PerturbationSpec& spec) {
  spec.validate();
  const std::string key(to_string(spec.target));
  if (model.perturbations().count(key)) {
    throw PerturbationError("target '" + key + "' already perturbed (" + model.perturbations().at(key) + ")");
  }
  SceneModel<Real> out = model;
  out.perturbations()[key] = spec.describe();
  switch (spec.target) {
    case PerturbTarget::kAlbedo: out.multipliers().albedo = spec.multiplier; break;
    case PerturbTarget::kRoughness: out.multipliers().roughness = spec.multiplier; break;
    case PerturbTarget::kF0: out.multipliers().f0 = spec.multiplier; break;
    case PerturbTarget::kDensity: {
      out.density_grid() = model.density_grid().deep_copy();
      perturb_density(out.density_grid(), spec.sigma_d, spec.seed);
      break;
    }
    case PerturbTarget::kEnvmap: {
      out.envmap() = model.envmap().deep_copy();
      if (spec.blur_size != 1) {
        const auto& env = model.envmap();
        out.envmap().set_radiance(
            blur_envmap(env.radiance_values(), env.height(), env.width(), spec.blur_size, spec.blur_sigma));
      }
      break;
    }
  }
  return out;
}

/// The eight manipulations with the ball-scene settings.
inline std::vector<PerturbationSpec> default_matrix_specs() {
  auto under = [](PerturbTarget t, double m) {
    auto s = PerturbationSpec::scale(t, m);
    s.direction = PerturbDirection::kUnder;
    return s;
  };
  return {under(PerturbTarget::kAlbedo, 0.0),
          PerturbationSpec::scale(PerturbTarget::kAlbedo, 1000.0),
          under(PerturbTarget::kRoughness, 0.1),
          PerturbationSpec::scale(PerturbTarget::kRoughness, 2.0),
          under(PerturbTarget::kF0, 0.8),
          PerturbationSpec::scale(PerturbTarget::kF0, 1.2),
          PerturbationSpec::noise(1.05, 0),
          PerturbationSpec::blur(301, 300.0)};
}

}  // namespace mfield
