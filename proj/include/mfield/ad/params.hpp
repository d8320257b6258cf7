#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mfield/ad/tensor.hpp"

namespace mfield {

/// The freeze/unfreeze unit of the model.
enum class GroupName { kDensity, kAlbedo, kRoughness, kF0, kEnvmap, kSpecularMlp };

inline constexpr std::array<GroupName, 6> kAllGroups = {GroupName::kDensity, GroupName::kAlbedo,
                                                        GroupName::kRoughness, GroupName::kF0,
                                                        GroupName::kEnvmap, GroupName::kSpecularMlp};

inline std::string_view to_string(GroupName g) {
  switch (g) {
    case GroupName::kDensity: return "density";
    case GroupName::kAlbedo: return "albedo";
    case GroupName::kRoughness: return "roughness";
    case GroupName::kF0: return "f0";
    case GroupName::kEnvmap: return "envmap";
    case GroupName::kSpecularMlp: return "specular_mlp";
  }
  return "?";
}

inline GroupName parse_group(std::string_view name) {
  for (GroupName g : kAllGroups) {
    if (to_string(g) == name) return g;
  }
  throw std::invalid_argument("unknown parameter group '" + std::string(name) + "'");
}

template <class Real>
struct ParamGroup {
  GroupName name;
  std::vector<ad::Tensor<Real>> tensors;
  bool trainable = true;

  void set_trainable(bool on) {
    trainable = on;
    for (auto& t : tensors) t.set_requires_grad(on);
  }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }
};

/// Per-group, per-tensor gradient buffers. Frozen groups have no entry.
template <class Real>
using GradientSet = std::map<GroupName, std::vector<std::vector<Real>>>;

template <class Real>
GradientSet<Real> collect_gradients(const std::vector<ParamGroup<Real>>& groups) {
  GradientSet<Real> out;
  for (const auto& g : groups) {
    if (!g.trainable) continue;
    auto& slot = out[g.name];
    for (const auto& t : g.tensors) {
      if (t.has_grad()) {
        slot.emplace_back(t.grad().begin(), t.grad().end());
      } else {
        slot.emplace_back(t.numel(), Real(0));
      }
    }
  }
  return out;
}

/// dst += src, elementwise; creates missing entries.
template <class Real>
void accumulate(GradientSet<Real>& dst, const GradientSet<Real>& src) {
  for (const auto& [name, tensors] : src) {
    auto& d = dst[name];
    if (d.empty()) {
      d = tensors;
      continue;
    }
    if (d.size() != tensors.size()) throw ad::ShapeError("gradient set tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (d[i].size() != tensors[i].size()) throw ad::ShapeError("gradient set extent mismatch");
      for (std::size_t k = 0; k < tensors[i].size(); ++k) d[i][k] += tensors[i][k];
    }
  }
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Real>
struct AdamState {
  std::map<GroupName, double> learning_rate;
  std::map<GroupName, std::vector<std::vector<Real>>> first_moment;
  std::map<GroupName, std::vector<std::vector<Real>>> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every trainable group. Frozen groups
/// are skipped entirely, so their values stay bit-identical.
template <class Real>
void adam_step(std::vector<ParamGroup<Real>>& groups, const GradientSet<Real>& grads, AdamState<Real>& state,
               const AdamHyper& hyper = {}) {
  for (const auto& g : groups) {
    if (!g.trainable) continue;
    auto it = grads.find(g.name);
    if (it == grads.end()) continue;
    if (it->second.size() != g.tensors.size()) {
      throw ad::ShapeError("gradient for group '" + std::string(to_string(g.name)) + "' has wrong tensor count");
    }
    for (std::size_t i = 0; i < g.tensors.size(); ++i) {
      if (it->second[i].size() != g.tensors[i].numel()) {
        throw ad::ShapeError("gradient shape mismatch in group '" + std::string(to_string(g.name)) + "'");
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  const Real b1 = static_cast<Real>(hyper.beta1), b2 = static_cast<Real>(hyper.beta2);
  for (auto& g : groups) {
    if (!g.trainable) continue;
    auto it = grads.find(g.name);
    if (it == grads.end()) continue;
    const double lr = state.learning_rate.count(g.name) ? state.learning_rate.at(g.name) : 1e-3;
    auto& ms = state.first_moment[g.name];
    auto& vs = state.second_moment[g.name];
    if (ms.size() != g.tensors.size()) {
      ms.assign(g.tensors.size(), {});
      vs.assign(g.tensors.size(), {});
    }
    for (std::size_t i = 0; i < g.tensors.size(); ++i) {
      auto values = g.tensors[i].mutable_data();
      const auto& grad = it->second[i];
      if (ms[i].size() != values.size()) {
        ms[i].assign(values.size(), Real(0));
        vs[i].assign(values.size(), Real(0));
      }
      for (std::size_t k = 0; k < values.size(); ++k) {
        const Real gk = grad[k];
        ms[i][k] = b1 * ms[i][k] + (Real(1) - b1) * gk;
        vs[i][k] = b2 * vs[i][k] + (Real(1) - b2) * gk * gk;
        const double m_hat = static_cast<double>(ms[i][k]) / c1;
        const double v_hat = static_cast<double>(vs[i][k]) / c2;
        values[k] = static_cast<Real>(static_cast<double>(values[k]) - lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
      }
    }
  }
}

}  // namespace mfield
