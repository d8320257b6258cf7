#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfield/io/image.hpp"
#include "mfield/render/camera.hpp"

namespace mfield {

struct SchemaError : IoError {
  using IoError::IoError;
};

/// One posed view. Colors are linear RGB; alpha is kept separately and never
/// composited into the color.
struct Frame {
  std::string file_path;
  Camera camera;
  std::vector<double> rgb;    // 3 per pixel
  std::vector<double> alpha;  // 1 per pixel
  std::vector<double> normal;  // optional ground-truth normals, 3 per pixel
};

struct SceneDataset {
  std::string name;
  double fov_x = 0.0;
  std::size_t width = 0, height = 0;
  std::vector<Frame> train, test;
  std::optional<EnvImage> envmap;

  std::size_t pixels_per_frame() const { return width * height; }
};

namespace detail {

inline Mat4 parse_matrix(const nlohmann::json& m, const std::string& where) {
  if (!m.is_array() || m.size() != 4) throw SchemaError(where + ": transform_matrix must be 4x4");
  Mat4 out{};
  for (std::size_t r = 0; r < 4; ++r) {
    if (!m[r].is_array() || m[r].size() != 4) throw SchemaError(where + ": transform_matrix must be 4x4");
    for (std::size_t c = 0; c < 4; ++c) {
      if (!m[r][c].is_number()) throw SchemaError(where + ": transform_matrix entries must be numbers");
      out[r * 4 + c] = m[r][c].get<double>();
      if (!std::isfinite(out[r * 4 + c])) throw SchemaError(where + ": non-finite transform_matrix entry");
    }
  }
  return out;
}

inline std::filesystem::path resolve_image(const std::filesystem::path& root, const std::string& file_path,
                                           const std::string& suffix = "") {
  std::filesystem::path p = root / file_path;
  if (suffix.empty() && p.has_extension()) return p.lexically_normal();
  std::filesystem::path stem = p;
  if (p.extension() == ".png") stem.replace_extension();
  return std::filesystem::path(stem.string() + suffix + ".png").lexically_normal();
}

}  // namespace detail

/// Loads one transforms_*.json file ("camera_angle_x" plus "frames" of
/// {"file_path", "transform_matrix"}). File paths without an extension get
/// ".png". A sibling "<image>_normal.png" is read as ground-truth normals.
inline std::vector<Frame> load_transforms(const std::filesystem::path& path, double* fov_out = nullptr,
                                          bool load_images = true) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  if (!j.contains("camera_angle_x") || !j["camera_angle_x"].is_number()) {
    throw SchemaError(path.string() + ": missing numeric \"camera_angle_x\"");
  }
  if (!j.contains("frames") || !j["frames"].is_array()) throw SchemaError(path.string() + ": missing \"frames\" array");
  const double fov = j["camera_angle_x"].get<double>();
  if (!std::isfinite(fov) || fov <= 0.0) throw SchemaError(path.string() + ": camera_angle_x must be positive");
  if (fov_out) *fov_out = fov;

  const auto root = path.parent_path();
  std::vector<Frame> frames;
  for (std::size_t i = 0; i < j["frames"].size(); ++i) {
    const auto& f = j["frames"][i];
    const std::string where = path.string() + " frame " + std::to_string(i);
    if (!f.contains("file_path") || !f["file_path"].is_string()) throw SchemaError(where + ": missing \"file_path\"");
    if (!f.contains("transform_matrix")) throw SchemaError(where + ": missing \"transform_matrix\"");
    Frame frame;
    frame.file_path = f["file_path"].get<std::string>();
    frame.camera.camera_to_world = detail::parse_matrix(f["transform_matrix"], where);
    frame.camera.fov_x = fov;
    if (load_images) {
      const auto image_path = detail::resolve_image(root, frame.file_path);
      if (!std::filesystem::exists(image_path)) throw IoError(where + ": missing image " + image_path.string());
      const auto img = read_png(image_path);
      frame.camera.width = img.width;
      frame.camera.height = img.height;
      const std::size_t n = img.width * img.height;
      frame.rgb.resize(n * 3);
      frame.alpha.resize(n);
      for (std::size_t p = 0; p < n; ++p) {
        for (int c = 0; c < 3; ++c) frame.rgb[p * 3 + c] = srgb_to_linear(img.data[p * 4 + c]);
        frame.alpha[p] = img.data[p * 4 + 3];
      }
      const auto normal_path = detail::resolve_image(root, frame.file_path, "_normal");
      if (std::filesystem::exists(normal_path)) {
        const auto nimg = read_png(normal_path);
        if (nimg.width != img.width || nimg.height != img.height) {
          throw IoError(normal_path.string() + ": normal image size differs from color image");
        }
        frame.normal.resize(n * 3);
        for (std::size_t p = 0; p < n; ++p) {
          Vec3 v{};
          for (int c = 0; c < 3; ++c) v[c] = nimg.data[p * 4 + c] * 2.0 - 1.0;
          const double len = length(v);
          for (int c = 0; c < 3; ++c) frame.normal[p * 3 + c] = len > 1e-6 ? v[c] / len : 0.0;
        }
      }
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

/// Loads a scene directory: transforms_train.json, transforms_test.json and an
/// optional env.pfm / env.png ground-truth environment.
inline SceneDataset load_scene(const std::filesystem::path& dir) {
  SceneDataset ds;
  ds.name = dir.filename().string();
  if (ds.name.empty()) ds.name = dir.parent_path().filename().string();
  double fov_train = 0.0, fov_test = 0.0;
  ds.train = load_transforms(dir / "transforms_train.json", &fov_train);
  const auto test_path = dir / "transforms_test.json";
  if (std::filesystem::exists(test_path)) ds.test = load_transforms(test_path, &fov_test);
  if (ds.train.empty()) throw SchemaError(dir.string() + ": no training frames");
  if (!ds.test.empty() && fov_test != fov_train) throw SchemaError(dir.string() + ": splits disagree on camera_angle_x");
  ds.fov_x = fov_train;
  ds.width = ds.train.front().camera.width;
  ds.height = ds.train.front().camera.height;
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& f : *split) {
      if (f.camera.width != ds.width || f.camera.height != ds.height) {
        throw SchemaError(dir.string() + ": frame " + f.file_path + " has a different resolution");
      }
    }
  for (const char* name : {"env.pfm", "env.png"}) {
    if (std::filesystem::exists(dir / name)) {
      ds.envmap = load_envmap(dir / name);
      break;
    }
  }
  return ds;
}

/// Writes a split in the same layout load_transforms reads.
inline void write_transforms(const std::filesystem::path& dir, const std::string& split,
                             const std::vector<Frame>& frames, double fov_x) {
  std::filesystem::create_directories(dir / split);
  nlohmann::json j;
  j["camera_angle_x"] = fov_x;
  j["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    const std::string rel = "./" + split + "/r_" + std::to_string(i);
    nlohmann::json m = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) {
      m.push_back({f.camera.camera_to_world[r * 4], f.camera.camera_to_world[r * 4 + 1],
                   f.camera.camera_to_world[r * 4 + 2], f.camera.camera_to_world[r * 4 + 3]});
    }
    j["frames"].push_back({{"file_path", rel}, {"transform_matrix", m}});
    const std::size_t n = f.camera.width * f.camera.height;
    Image img{f.camera.width, f.camera.height, 4, std::vector<double>(n * 4)};
    for (std::size_t p = 0; p < n; ++p) {
      for (int c = 0; c < 3; ++c) img.data[p * 4 + c] = linear_to_srgb(f.rgb[p * 3 + c]);
      img.data[p * 4 + 3] = f.alpha.empty() ? 1.0 : f.alpha[p];
    }
    write_png_raw(dir / (rel + ".png"), img);
    if (!f.normal.empty()) {
      Image nimg{f.camera.width, f.camera.height, 3, std::vector<double>(n * 3)};
      for (std::size_t k = 0; k < n * 3; ++k) nimg.data[k] = f.normal[k] * 0.5 + 0.5;
      write_png_raw(dir / (rel + "_normal.png"), nimg);
    }
  }
  std::ofstream out(dir / ("transforms_" + split + ".json"));
  if (!out) throw IoError((dir / ("transforms_" + split + ".json")).string() + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

}  // namespace mfield
