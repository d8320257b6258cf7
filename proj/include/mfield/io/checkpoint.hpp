#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfield/ad/rng.hpp"
#include "mfield/fields/scene_model.hpp"
#include "mfield/io/image.hpp"

namespace mfield {

struct CheckpointMismatch : IoError {
  using IoError::IoError;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"box_lo", {c.box.lo[0], c.box.lo[1], c.box.lo[2]}},
          {"box_hi", {c.box.hi[0], c.box.hi[1], c.box.hi[2]}},
          {"density_resolution", c.density_resolution},
          {"density_rank", c.density_rank},
          {"appearance_resolution", c.appearance_resolution},
          {"appearance_rank", c.appearance_rank},
          {"appearance_channels", c.appearance_channels},
          {"pe_frequencies", c.pe_frequencies},
          {"material_hidden", c.material_hidden},
          {"material_layers", c.material_layers},
          {"specular_hidden", c.specular_hidden},
          {"specular_layers", c.specular_layers},
          {"env_height", c.env_height},
          {"env_width", c.env_width},
          {"env_init_radiance", c.env_init_radiance},
          {"density_shift", c.density_shift},
          {"init_stddev", c.init_stddev},
          {"normal_epsilon", c.normal_epsilon}};
}

/// Missing keys keep the defaults of `base`.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  if (j.contains("box_lo"))
    for (int k = 0; k < 3; ++k) base.box.lo[k] = j["box_lo"][k].get<double>();
  if (j.contains("box_hi"))
    for (int k = 0; k < 3; ++k) base.box.hi[k] = j["box_hi"][k].get<double>();
  get("density_resolution", base.density_resolution);
  get("density_rank", base.density_rank);
  get("appearance_resolution", base.appearance_resolution);
  get("appearance_rank", base.appearance_rank);
  get("appearance_channels", base.appearance_channels);
  get("pe_frequencies", base.pe_frequencies);
  get("material_hidden", base.material_hidden);
  get("material_layers", base.material_layers);
  get("specular_hidden", base.specular_hidden);
  get("specular_layers", base.specular_layers);
  get("env_height", base.env_height);
  get("env_width", base.env_width);
  get("env_init_radiance", base.env_init_radiance);
  get("density_shift", base.density_shift);
  get("init_stddev", base.init_stddev);
  get("normal_epsilon", base.normal_epsilon);
  return base;
}

inline std::uint64_t config_hash(const ModelConfig& c) { return hash_tag(to_json(c).dump()); }

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

/// Extra state stored alongside the tensors.
struct CheckpointMeta {
  std::size_t iteration = 0;
  nlohmann::json train_config = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();
};

template <class Real>
struct LoadedCheckpoint {
  SceneModel<Real> model;
  CheckpointMeta meta;
};

/// Writes <dir>/manifest.json and <dir>/tensors.bin. Tensors are raw
/// little-endian float32 in manifest order.
template <class Real>
void save_checkpoint(const std::filesystem::path& dir, const SceneModel<Real>& model, const CheckpointMeta& meta = {}) {
  std::filesystem::create_directories(dir);
  auto& m = const_cast<SceneModel<Real>&>(model);
  nlohmann::json manifest;
  manifest["format"] = "mfield-checkpoint";
  manifest["version"] = 1;
  manifest["iteration"] = meta.iteration;
  manifest["model_config"] = to_json(model.config());
  manifest["config_hash"] = hex64(config_hash(model.config()));
  manifest["train_config"] = meta.train_config;
  manifest["extra"] = meta.extra;
  nlohmann::json mult = nlohmann::json::object();
  if (model.multipliers().albedo) mult["albedo"] = *model.multipliers().albedo;
  if (model.multipliers().roughness) mult["roughness"] = *model.multipliers().roughness;
  if (model.multipliers().f0) mult["f0"] = *model.multipliers().f0;
  manifest["multipliers"] = mult;
  manifest["perturbations"] = model.perturbations();

  std::vector<std::uint8_t> blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (GroupName g : kAllGroups) {
    for (auto& [name, t] : m.named_tensors(g)) {
      tensors.push_back({{"name", name},
                         {"group", std::string(to_string(g))},
                         {"shape", t->shape()},
                         {"offset", blob.size()},
                         {"count", t->numel()}});
      for (Real v : t->data()) {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        for (int k = 0; k < 4; ++k) blob.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
      }
    }
  }
  manifest["tensors"] = tensors;

  const auto bin_path = dir / "tensors.bin", manifest_path = dir / "manifest.json";
  {
    std::ofstream out(bin_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(bin_path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError(bin_path.string() + ": write failed");
  }
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError(manifest_path.string() + ": cannot open for writing");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError(manifest_path.string() + ": write failed");
}

/// Loads a checkpoint. When `expected` is given its hash must match the
/// stored one unless `allow_mismatch` is set.
template <class Real = float>
LoadedCheckpoint<Real> load_checkpoint(const std::filesystem::path& dir, const std::optional<ModelConfig>& expected = {},
                                       bool allow_mismatch = false) {
  const auto manifest_path = dir / "manifest.json", bin_path = dir / "tensors.bin";
  std::ifstream min(manifest_path);
  if (!min) throw IoError(manifest_path.string() + ": cannot open");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(min);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "mfield-checkpoint") throw IoError(manifest_path.string() + ": not a checkpoint");
  const ModelConfig config = model_config_from_json(manifest.at("model_config"));
  const std::string stored_hash = manifest.at("config_hash").get<std::string>();
  if (stored_hash != hex64(config_hash(config))) {
    throw IoError(manifest_path.string() + ": config hash does not match the stored model config");
  }
  if (expected && hex64(config_hash(*expected)) != stored_hash && !allow_mismatch) {
    throw CheckpointMismatch(manifest_path.string() + ": model config hash " + stored_hash +
                             " differs from the requested config " + hex64(config_hash(*expected)));
  }

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError(bin_path.string() + ": cannot open");
  const std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  LoadedCheckpoint<Real> out;
  out.model = SceneModel<Real>(config, 0);
  std::map<std::string, ad::Tensor<Real>*> by_name;
  for (auto& [name, t] : out.model.named_tensors()) by_name[name] = t;
  std::size_t seen = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError(manifest_path.string() + ": unknown tensor '" + name + "'");
    auto& t = *it->second;
    if (entry.at("shape").get<ad::Shape>() != t.shape()) {
      throw IoError(manifest_path.string() + ": shape mismatch for '" + name + "'");
    }
    const std::size_t offset = entry.at("offset").get<std::size_t>(), count = entry.at("count").get<std::size_t>();
    if (count != t.numel() || offset + count * 4 > blob.size()) {
      throw IoError(bin_path.string() + ": truncated data for '" + name + "'");
    }
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint8_t* b = blob.data() + offset + i * 4;
      const float v = std::bit_cast<float>(std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                                           std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24);
      if (!std::isfinite(v)) throw IoError(bin_path.string() + ": non-finite value in '" + name + "'");
      data[i] = static_cast<Real>(v);
    }
    ++seen;
  }
  if (seen != by_name.size()) throw IoError(manifest_path.string() + ": missing tensors");

  const auto& mult = manifest.at("multipliers");
  if (mult.contains("albedo")) out.model.multipliers().albedo = mult["albedo"].get<double>();
  if (mult.contains("roughness")) out.model.multipliers().roughness = mult["roughness"].get<double>();
  if (mult.contains("f0")) out.model.multipliers().f0 = mult["f0"].get<double>();
  out.model.perturbations() = manifest.at("perturbations").get<std::map<std::string, std::string>>();
  out.meta.iteration = manifest.at("iteration").get<std::size_t>();
  out.meta.train_config = manifest.at("train_config");
  out.meta.extra = manifest.value("extra", nlohmann::json::object());
  return out;
}

}  // namespace mfield
