#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfield/ad/ops.hpp"
#include "mfield/ad/params.hpp"
#include "mfield/ad/rng.hpp"
#include "mfield/fields/mlp.hpp"
#include "mfield/fields/vm_grid.hpp"
#include "mfield/shading/envmap.hpp"

namespace mfield {

struct ModelConfig {
  Aabb box{{-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}};
  std::size_t density_resolution = 48;
  std::size_t density_rank = 8;
  std::size_t appearance_resolution = 32;
  std::size_t appearance_rank = 4;
  std::size_t appearance_channels = 8;
  std::size_t pe_frequencies = 6;
  std::size_t material_hidden = 64;
  std::size_t material_layers = 2;
  std::size_t specular_hidden = 32;
  std::size_t specular_layers = 2;
  std::size_t env_height = 64;
  std::size_t env_width = 128;
  double env_init_radiance = 0.5;
  double density_shift = -10.0;
  double init_stddev = 0.1;
  double normal_epsilon = 1e-8;

  /// Coarser sky and a higher starting density than the defaults: with the
  /// default 64x128 sky and shift -10, density grows fog to explain the
  /// background before the sky catches up.
  static ModelConfig desk() {
    ModelConfig c;
    c.env_height = 32;
    c.env_width = 64;
    c.density_shift = -7.0;
    return c;
  }
  static ModelConfig full() {
    ModelConfig c;
    c.density_resolution = 128;
    c.appearance_resolution = 96;
    c.env_height = 256;
    c.env_width = 512;
    return c;
  }
};

/// Material values at a batch of points.
template <class Real>
struct Material {
  ad::Tensor<Real> albedo;     // [n, 3]
  ad::Tensor<Real> roughness;  // [n, 1]
  ad::Tensor<Real> f0;         // [n, 3]
};

template <class Real>
struct NormalField {
  ad::Tensor<Real> normal;        // [n, 3], unit where defined
  std::vector<bool> degenerate;   // |grad sigma| <= epsilon
};

/// Post-sigmoid multipliers applied inside material(); results clip to [0, 1].
struct MaterialMultipliers {
  std::optional<double> albedo, roughness, f0;
};

/// Density field, three disentangled appearance branches with their decoder
/// heads, the implicit specular term g, and the environment map.
template <class Real>
class SceneModel {
 public:
  SceneModel() = default;

  SceneModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    const std::size_t dr = config.density_resolution, ar = config.appearance_resolution;
    density_ = VMGrid<Real>({dr, dr, dr}, config.density_rank, 1, config.box);
    for (auto& g : appearance_) {
      g = VMGrid<Real>({ar, ar, ar}, config.appearance_rank, config.appearance_channels, config.box);
    }
    Rng grid_rng(seed, "init.grids");
    density_.init_normal(grid_rng, config.init_stddev);
    for (auto& g : appearance_) g.init_normal(grid_rng, config.init_stddev);

    const PositionalEncoding pe = position_encoding();
    const std::size_t in = config.appearance_channels + pe.output_width(3);
    const std::array<std::size_t, 3> outs{3, 1, 3};
    Rng mlp_rng(seed, "init.mlps");
    for (int k = 0; k < 3; ++k) {
      std::vector<std::size_t> widths{in};
      for (std::size_t l = 0; l < config.material_layers; ++l) widths.push_back(config.material_hidden);
      widths.push_back(outs[k]);
      heads_[k] = Mlp<Real>(widths, mlp_rng);
    }
    std::vector<std::size_t> sw{pe.output_width(3)};
    for (std::size_t l = 0; l < config.specular_layers; ++l) sw.push_back(config.specular_hidden);
    sw.push_back(1);
    specular_head_ = Mlp<Real>(sw, mlp_rng, /*zero_head=*/true);

    env_ = EnvironmentMap<Real>(config.env_height, config.env_width, config.env_init_radiance);
    for (GroupName g : kAllGroups) trainable_[g] = true;
  }

  const ModelConfig& config() const { return config_; }
  PositionalEncoding position_encoding() const { return {config_.pe_frequencies, true}; }

  VMGrid<Real>& density_grid() { return density_; }
  const VMGrid<Real>& density_grid() const { return density_; }
  VMGrid<Real>& albedo_grid() { return appearance_[0]; }
  VMGrid<Real>& roughness_grid() { return appearance_[1]; }
  VMGrid<Real>& f0_grid() { return appearance_[2]; }
  const VMGrid<Real>& albedo_grid() const { return appearance_[0]; }
  const VMGrid<Real>& roughness_grid() const { return appearance_[1]; }
  const VMGrid<Real>& f0_grid() const { return appearance_[2]; }
  Mlp<Real>& albedo_head() { return heads_[0]; }
  Mlp<Real>& roughness_head() { return heads_[1]; }
  Mlp<Real>& f0_head() { return heads_[2]; }
  Mlp<Real>& specular_head() { return specular_head_; }
  const Mlp<Real>& specular_head() const { return specular_head_; }
  EnvironmentMap<Real>& envmap() { return env_; }
  const EnvironmentMap<Real>& envmap() const { return env_; }

  MaterialMultipliers& multipliers() { return multipliers_; }
  const MaterialMultipliers& multipliers() const { return multipliers_; }
  /// Free-form record of perturbations applied to this model, keyed by target.
  std::map<std::string, std::string>& perturbations() { return perturbations_; }
  const std::map<std::string, std::string>& perturbations() const { return perturbations_; }

  /// Raw (pre-activation) density: [n, 1].
  ad::Tensor<Real> raw_density(std::span<const Vec3> positions) const { return density_.query(positions); }

  /// sigma = softplus(raw + shift): [n, 1].
  ad::Tensor<Real> density(std::span<const Vec3> positions) const {
    return ad::softplus(raw_density(positions) + static_cast<Real>(config_.density_shift));
  }

  /// Normals as the negated, normalized density gradient. Degenerate rows take
  /// `fallback` (or +z when none is given).
  NormalField<Real> normals(std::span<const Vec3> positions, std::span<const Vec3> fallback = {}) const {
    const std::size_t n = positions.size();
    const auto raw = raw_density(positions);
    const auto grad_raw = density_.spatial_gradient(positions);
    const auto grad_sigma = ad::sigmoid(raw + static_cast<Real>(config_.density_shift)) * grad_raw;
    const auto norm2 = ad::dot3(grad_sigma, grad_sigma);

    NormalField<Real> out;
    out.degenerate.resize(n);
    std::vector<Real> valid(n), fb(n * 3);
    const double eps2 = config_.normal_epsilon * config_.normal_epsilon;
    for (std::size_t i = 0; i < n; ++i) {
      out.degenerate[i] = !(static_cast<double>(norm2[i]) > eps2);
      valid[i] = out.degenerate[i] ? Real(0) : Real(1);
      const Vec3 f = fallback.empty() ? Vec3{0.0, 0.0, 1.0} : fallback[i];
      for (int k = 0; k < 3; ++k) fb[i * 3 + k] = out.degenerate[i] ? static_cast<Real>(f[k]) : Real(0);
    }
    // Degenerate rows get a unit denominator so nothing divides by zero.
    const auto valid_t = ad::Tensor<Real>::from({n, 1}, std::move(valid));
    const auto safe = norm2 * valid_t + (Real(1) - valid_t);
    const auto unit = -grad_sigma / ad::sqrt(safe);
    out.normal = unit * valid_t + ad::Tensor<Real>::from({n, 3}, std::move(fb));
    return out;
  }

  Material<Real> material(std::span<const Vec3> positions) const {
    const auto pe = position_encoding()(positions_tensor(positions));
    Material<Real> m;
    m.albedo = head(0, positions, pe, multipliers_.albedo);
    m.roughness = head(1, positions, pe, multipliers_.roughness);
    m.f0 = head(2, positions, pe, multipliers_.f0);
    return m;
  }

  /// Implicit specular factor g in (0, 2) from per-sample direction cosines
  /// [n, 3] = (n.wi, n.wo, n.h).
  ad::Tensor<Real> specular_factor(const ad::Tensor<Real>& cosines) const {
    return Real(2) * ad::sigmoid(specular_head_(position_encoding()(cosines)));
  }

  std::vector<ParamGroup<Real>> groups() const {
    std::vector<ParamGroup<Real>> out;
    for (GroupName g : kAllGroups) out.push_back({g, group_tensors(g), trainable_.at(g)});
    return out;
  }

  std::vector<ad::Tensor<Real>> group_tensors(GroupName g) const {
    std::vector<ad::Tensor<Real>> out;
    for (auto& [name, t] : const_cast<SceneModel*>(this)->named_tensors(g)) out.push_back(*t);
    return out;
  }

  /// Stable (name, tensor) listing of one group, used for persistence.
  std::vector<std::pair<std::string, ad::Tensor<Real>*>> named_tensors(GroupName g) {
    std::vector<std::pair<std::string, ad::Tensor<Real>*>> out;
    const std::string prefix(to_string(g));
    auto add_grid = [&](VMGrid<Real>& grid) {
      auto ts = grid.mutable_tensors();
      for (int m = 0; m < 3; ++m) out.emplace_back(prefix + ".plane" + std::to_string(m), ts[m]);
      for (int m = 0; m < 3; ++m) out.emplace_back(prefix + ".line" + std::to_string(m), ts[3 + m]);
    };
    auto add_mlp = [&](Mlp<Real>& mlp) {
      auto ts = mlp.mutable_tensors();
      for (std::size_t i = 0; i < ts.size(); ++i) {
        out.emplace_back(prefix + (i % 2 == 0 ? ".weight" : ".bias") + std::to_string(i / 2), ts[i]);
      }
    };
    switch (g) {
      case GroupName::kDensity: add_grid(density_); break;
      case GroupName::kAlbedo: add_grid(appearance_[0]); add_mlp(heads_[0]); break;
      case GroupName::kRoughness: add_grid(appearance_[1]); add_mlp(heads_[1]); break;
      case GroupName::kF0: add_grid(appearance_[2]); add_mlp(heads_[2]); break;
      case GroupName::kEnvmap: out.emplace_back(prefix + ".raw", &env_.raw()); break;
      case GroupName::kSpecularMlp: add_mlp(specular_head_); break;
    }
    return out;
  }

  std::vector<std::pair<std::string, ad::Tensor<Real>*>> named_tensors() {
    std::vector<std::pair<std::string, ad::Tensor<Real>*>> out;
    for (GroupName g : kAllGroups) {
      auto part = named_tensors(g);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

  bool trainable(GroupName g) const { return trainable_.at(g); }
  void set_trainable(GroupName g, bool on) {
    trainable_[g] = on;
    for (auto& [name, t] : named_tensors(g)) t->set_requires_grad(on);
  }
  /// Exactly one group trainable.
  void train_only(GroupName g) {
    for (GroupName other : kAllGroups) set_trainable(other, other == g);
  }

  /// Shares parameter values, separate gradient buffers.
  SceneModel aliased() const { return transform([](const ad::Tensor<Real>& t) { return t.alias(); }); }
  SceneModel deep_copy() const { return transform([](const ad::Tensor<Real>& t) { return t.clone(); }); }

  template <class Other>
  SceneModel<Other> cast() const {
    SceneModel<Other> out;
    out.config_ = config_;
    out.density_ = density_.template cast<Other>();
    for (int k = 0; k < 3; ++k) out.appearance_[k] = appearance_[k].template cast<Other>();
    for (int k = 0; k < 3; ++k) out.heads_[k] = cast_mlp<Other>(heads_[k]);
    out.specular_head_ = cast_mlp<Other>(specular_head_);
    out.env_ = env_.template cast<Other>();
    out.multipliers_ = multipliers_;
    out.perturbations_ = perturbations_;
    out.trainable_ = trainable_;
    return out;
  }

 private:
  template <class> friend class SceneModel;

  static ad::Tensor<Real> positions_tensor(std::span<const Vec3> positions) {
    std::vector<Real> v(positions.size() * 3);
    for (std::size_t i = 0; i < positions.size(); ++i)
      for (int k = 0; k < 3; ++k) v[i * 3 + k] = static_cast<Real>(positions[i][k]);
    return ad::Tensor<Real>::from({positions.size(), 3}, std::move(v));
  }

  ad::Tensor<Real> head(int k, std::span<const Vec3> positions, const ad::Tensor<Real>& pe,
                        const std::optional<double>& multiplier) const {
    const auto feature = appearance_[k].query(positions);
    auto out = ad::sigmoid(heads_[k](ad::concat_cols(std::vector{feature, pe})));
    if (multiplier) out = ad::clamp(out * static_cast<Real>(*multiplier), Real(0), Real(1));
    return out;
  }

  template <class Other>
  static Mlp<Other> cast_mlp(const Mlp<Real>& mlp) {
    Mlp<Other> out;
    for (const auto& w : mlp.weights) out.weights.push_back(w.template cast<Other>());
    for (const auto& b : mlp.biases) out.biases.push_back(b.template cast<Other>());
    return out;
  }

  template <class F>
  SceneModel transform(F&& f) const {
    SceneModel out = *this;
    for (auto* grid : {&out.density_, &out.appearance_[0], &out.appearance_[1], &out.appearance_[2]}) {
      for (auto* t : grid->mutable_tensors()) *t = f(*t);
    }
    for (auto* mlp : {&out.heads_[0], &out.heads_[1], &out.heads_[2], &out.specular_head_}) {
      for (auto* t : mlp->mutable_tensors()) *t = f(*t);
    }
    out.env_.raw() = f(env_.raw());
    return out;
  }

  ModelConfig config_;
  VMGrid<Real> density_;
  std::array<VMGrid<Real>, 3> appearance_;
  std::array<Mlp<Real>, 3> heads_;
  Mlp<Real> specular_head_;
  EnvironmentMap<Real> env_;
  MaterialMultipliers multipliers_;
  std::map<std::string, std::string> perturbations_;
  std::map<GroupName, bool> trainable_;
};

}  // namespace mfield
