#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfield/harness/train.hpp"
#include "mfield/io/report.hpp"

namespace mfield {

struct PoseMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::array<const char*, 4> kConsistencyProperties = {"albedo", "roughness", "f0", "normal"};

/// Spread of the estimated properties across models trained under different
/// illuminations. Maps hold one value per pixel, views stacked top to bottom.
struct ConsistencyReport {
  std::size_t models = 0, views = 0, width = 0, height = 0;
  std::map<std::string, std::vector<double>> stddev;  // per-pixel std, averaged over channels
  std::map<std::string, std::vector<double>> mean;    // per-pixel mean, averaged over channels
  std::map<std::string, double> mean_stddev;          // over foreground pixels
  std::map<std::string, double> mean_value;           // over foreground pixels
  std::size_t foreground_pixels = 0;
};

/// Throws PoseMismatch unless every dataset has the same resolution and the
/// same cameras (within 1e-9) in both splits.
inline void check_same_poses(const std::vector<SceneDataset>& sets) {
  if (sets.size() < 2) throw std::invalid_argument("consistency needs at least two datasets");
  const auto& ref = sets.front();
  for (std::size_t k = 1; k < sets.size(); ++k) {
    const auto& ds = sets[k];
    if (ds.width != ref.width || ds.height != ref.height) throw PoseMismatch("dataset " + std::to_string(k) + ": resolution differs");
    for (auto split : {&SceneDataset::train, &SceneDataset::test}) {
      const auto &a = ref.*split, &b = ds.*split;
      if (a.size() != b.size()) throw PoseMismatch("dataset " + std::to_string(k) + ": frame count differs");
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].camera.fov_x != b[i].camera.fov_x) throw PoseMismatch("dataset " + std::to_string(k) + ": fov differs");
        for (std::size_t e = 0; e < 16; ++e) {
          if (std::abs(a[i].camera.camera_to_world[e] - b[i].camera.camera_to_world[e]) > 1e-9) {
            throw PoseMismatch("dataset " + std::to_string(k) + ": pose of frame " + std::to_string(i) + " differs");
          }
        }
      }
    }
  }
}

/// Renders property buffers of every model from `cameras` and reduces them to
/// per-pixel spread. Foreground = opacity >= 0.5 in every model.
inline ConsistencyReport consistency_from_models(const std::vector<SceneModel<float>>& models,
                                                 const std::vector<Camera>& cameras, const RenderConfig& render,
                                                 std::uint64_t seed) {
  if (models.size() < 2) throw std::invalid_argument("consistency needs at least two models");
  if (cameras.empty()) throw std::invalid_argument("consistency needs at least one view");
  ConsistencyReport rep;
  rep.models = models.size();
  rep.views = cameras.size();
  rep.width = cameras.front().width;
  rep.height = cameras.front().height;
  const std::size_t per = rep.width * rep.height, n = per * rep.views;
  const std::map<std::string, std::size_t> channels = {{"albedo", 3}, {"roughness", 1}, {"f0", 3}, {"normal", 3}};

  // sums[prop][pixel * ch + c], sum of squares likewise.
  std::map<std::string, std::vector<double>> sum, sq;
  for (const auto& [p, ch] : channels) {
    sum[p].assign(n * ch, 0.0);
    sq[p].assign(n * ch, 0.0);
  }
  std::vector<bool> foreground(n, true);
  for (const auto& model : models) {
    for (std::size_t v = 0; v < rep.views; ++v) {
      const auto& cam = cameras[v];
      if (cam.width != rep.width || cam.height != rep.height) throw PoseMismatch("views differ in resolution");
      const auto img = render_image(model, cam, render, seed, (1ULL << 40) + v * per * 3);
      for (std::size_t p = 0; p < per; ++p) {
        const std::size_t i = v * per + p;
        foreground[i] = foreground[i] && img.opacity[p] >= 0.5;
        auto add = [&](const std::string& prop, const std::vector<double>& buf, std::size_t ch) {
          for (std::size_t c = 0; c < ch; ++c) {
            const double x = buf[p * ch + c];
            sum[prop][i * ch + c] += x;
            sq[prop][i * ch + c] += x * x;
          }
        };
        add("albedo", img.albedo, 3);
        add("roughness", img.roughness, 1);
        add("f0", img.f0, 3);
        add("normal", img.normal, 3);
      }
    }
  }

  const double K = static_cast<double>(models.size());
  for (std::size_t i = 0; i < n; ++i) rep.foreground_pixels += foreground[i];
  for (const auto& [prop, ch] : channels) {
    auto& sd = rep.stddev[prop];
    auto& mu = rep.mean[prop];
    sd.assign(n, 0.0);
    mu.assign(n, 0.0);
    double fg_sd = 0.0, fg_mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < ch; ++c) {
        const double m = sum[prop][i * ch + c] / K;
        const double var = std::max(0.0, sq[prop][i * ch + c] / K - m * m);
        sd[i] += std::sqrt(var) / static_cast<double>(ch);
        mu[i] += m / static_cast<double>(ch);
      }
      if (foreground[i]) {
        fg_sd += sd[i];
        fg_mu += mu[i];
      }
    }
    const double fg = static_cast<double>(rep.foreground_pixels);
    rep.mean_stddev[prop] = fg > 0 ? fg_sd / fg : 0.0;
    rep.mean_value[prop] = fg > 0 ? fg_mu / fg : 0.0;
  }
  return rep;
}

/// Trains one model per illumination (seed = seeds[k] or config.seed) and
/// compares their property buffers on the shared test poses.
inline ConsistencyReport consistency_experiment(const std::vector<SceneDataset>& datasets, const TrainConfig& config,
                                                const std::vector<std::uint64_t>& seeds = {},
                                                std::vector<SceneModel<float>>* trained = nullptr) {
  check_same_poses(datasets);
  if (!seeds.empty() && seeds.size() != datasets.size()) throw std::invalid_argument("one seed per dataset expected");
  std::vector<SceneModel<float>> models;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    TrainConfig c = config;
    if (!seeds.empty()) c.seed = seeds[k];
    models.push_back(train(datasets[k], c).model);
  }
  const auto& ref = datasets.front();
  std::vector<Camera> cams;
  for (const auto& f : ref.test.empty() ? ref.train : ref.test) cams.push_back(f.camera);
  RenderConfig rc = config.eval_render;
  rc.workers = config.worker_count();
  auto rep = consistency_from_models(models, cams, rc, config.seed);
  if (trained) *trained = std::move(models);
  return rep;
}

inline nlohmann::json to_json(const ConsistencyReport& r) {
  nlohmann::json j;
  j["models"] = r.models;
  j["views"] = r.views;
  j["width"] = r.width;
  j["height"] = r.height;
  j["foreground_pixels"] = r.foreground_pixels;
  for (const char* p : kConsistencyProperties) {
    j["properties"][p] = {{"mean_stddev", r.mean_stddev.at(p)}, {"mean_value", r.mean_value.at(p)}};
  }
  return j;
}

/// consistency.json plus one grayscale std-dev map per property (views
/// stacked vertically, scaled so the largest value is white).
inline void write_consistency(const std::filesystem::path& dir, const ConsistencyReport& r) {
  std::filesystem::create_directories(dir);
  write_text(dir / "consistency.json", to_json(r).dump(2) + "\n");
  for (const char* p : kConsistencyProperties) {
    const auto& sd = r.stddev.at(p);
    double peak = 0.0;
    for (double v : sd) peak = std::max(peak, v);
    Image img{r.width, r.height * r.views, 3, std::vector<double>(sd.size() * 3)};
    for (std::size_t i = 0; i < sd.size(); ++i)
      for (int c = 0; c < 3; ++c) img.data[i * 3 + c] = peak > 0 ? sd[i] / peak : 0.0;
    write_png_raw(dir / (std::string(p) + "_std.png"), img);
  }
}

}  // namespace mfield
