#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mfield/ad/params.hpp"
#include "mfield/io/checkpoint.hpp"
#include "mfield/io/dataset.hpp"
#include "mfield/metrics/metrics.hpp"
#include "mfield/render/renderer.hpp"

namespace mfield {

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch_rays = 512;
  double lr_grid = 0.02;
  double lr_mlp = 1e-3;
  double lr_env = 1e-3;
  /// Learning rates decay exponentially to this fraction at the last iteration.
  double lr_decay = 0.1;
  double lambda_photometric = 1.0;
  double lambda_orientation = 0.01;
  double lambda_entropy = 0.001;
  std::uint64_t seed = 0;
  /// Evaluate on the test split every this many iterations (0 = only at the end).
  std::size_t eval_every = 0;
  /// Cap on test views per evaluation (0 = all).
  std::size_t eval_views = 0;
  std::size_t finetune_iterations = 500;
  std::size_t workers = 0;  // 0 = hardware concurrency
  ModelConfig model;
  RenderConfig render;       // training rays
  RenderConfig eval_render;  // evaluation images

  static TrainConfig desk() {
    TrainConfig c;
    c.model = ModelConfig::desk();
    c.lr_env = 0.02;
    c.lambda_entropy = 0.01;
    c.render.samples_per_ray = 64;
    c.render.diffuse_samples = 8;
    c.render.specular_samples = 2;
    c.eval_render = c.render;
    c.eval_render.samples_per_ray = 128;
    c.eval_render.diffuse_samples = 32;
    c.eval_render.specular_samples = 8;
    return c;
  }
  static TrainConfig full() {
    TrainConfig c;
    c.iterations = 30000;
    c.batch_rays = 4096;
    c.finetune_iterations = 5000;
    c.model = ModelConfig::full();
    c.eval_render.diffuse_samples = 64;
    c.eval_render.specular_samples = 16;
    return c;
  }

  std::size_t worker_count() const {
    return workers ? workers : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }

  void validate() const {
    if (batch_rays == 0) throw std::invalid_argument("batch_rays must be positive");
    for (double v : {lr_grid, lr_mlp, lr_env, lr_decay}) {
      if (!(v > 0.0)) throw std::invalid_argument("learning rates and decay must be positive");
    }
    for (double v : {lambda_photometric, lambda_orientation, lambda_entropy}) {
      if (!(v >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
    }
    if (render.samples_per_ray == 0 || eval_render.samples_per_ray == 0) {
      throw std::invalid_argument("samples_per_ray must be positive");
    }
  }
};

inline nlohmann::json to_json(const RenderConfig& r) {
  return {{"samples_per_ray", r.samples_per_ray}, {"diffuse_samples", r.diffuse_samples},
          {"specular_samples", r.specular_samples}, {"bounces", r.bounces},
          {"weight_threshold", r.weight_threshold}, {"tile_size", r.tile_size},
          {"secondary_samples", r.secondary_samples}};
}

inline RenderConfig render_config_from_json(const nlohmann::json& j, RenderConfig r) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("samples_per_ray", r.samples_per_ray);
  get("diffuse_samples", r.diffuse_samples);
  get("specular_samples", r.specular_samples);
  get("bounces", r.bounces);
  get("weight_threshold", r.weight_threshold);
  get("tile_size", r.tile_size);
  get("secondary_samples", r.secondary_samples);
  return r;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},
          {"batch_rays", c.batch_rays},
          {"lr_grid", c.lr_grid},
          {"lr_mlp", c.lr_mlp},
          {"lr_env", c.lr_env},
          {"lr_decay", c.lr_decay},
          {"lambda_photometric", c.lambda_photometric},
          {"lambda_orientation", c.lambda_orientation},
          {"lambda_entropy", c.lambda_entropy},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"eval_views", c.eval_views},
          {"finetune_iterations", c.finetune_iterations},
          {"model", to_json(c.model)},
          {"render", to_json(c.render)},
          {"eval_render", to_json(c.eval_render)}};
}

/// Keys absent from `j` keep the values of `base`.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = TrainConfig::desk()) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("iterations", base.iterations);
  get("batch_rays", base.batch_rays);
  get("lr_grid", base.lr_grid);
  get("lr_mlp", base.lr_mlp);
  get("lr_env", base.lr_env);
  get("lr_decay", base.lr_decay);
  get("lambda_photometric", base.lambda_photometric);
  get("lambda_orientation", base.lambda_orientation);
  get("lambda_entropy", base.lambda_entropy);
  get("seed", base.seed);
  get("eval_every", base.eval_every);
  get("eval_views", base.eval_views);
  get("finetune_iterations", base.finetune_iterations);
  if (j.contains("model")) base.model = model_config_from_json(j["model"], base.model);
  if (j.contains("render")) base.render = render_config_from_json(j["render"], base.render);
  if (j.contains("eval_render")) base.eval_render = render_config_from_json(j["eval_render"], base.eval_render);
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Losses

/// Mean squared error of clamp(pred, 0, 1) against the target, over all channels.
template <class Real>
ad::Tensor<Real> photometric_loss(const ad::Tensor<Real>& rgb, const ad::Tensor<Real>& target) {
  const auto d = ad::clamp(rgb, Real(0), Real(1)) - target;
  return ad::mean(d * d);
}

/// Back-facing penalty sum_j w_j max(0, n_j . d)^2 per ray, averaged over
/// `rays` rays. `directions` holds the ray direction of every sample row.
template <class Real>
ad::Tensor<Real> orientation_loss(const ad::Tensor<Real>& weights, const ad::Tensor<Real>& normals,
                                  const ad::Tensor<Real>& directions, std::size_t rays) {
  if (weights.rows() == 0 || rays == 0) return ad::Tensor<Real>::scalar(Real(0));
  const auto facing = ad::relu(ad::sum_cols(normals * directions));
  return ad::sum(weights * facing * facing) * (Real(1) / static_cast<Real>(rays));
}

/// Mean binary entropy of the ray opacities.
template <class Real>
ad::Tensor<Real> opacity_entropy(const ad::Tensor<Real>& opacity) {
  const auto o = ad::clamp(opacity, Real(1e-5), Real(1 - 1e-5));
  return ad::mean(-(o * ad::log(o) + (Real(1) - o) * ad::log(Real(1) - o)));
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  MetricBundle metrics;
  std::vector<RenderedImage> images;
};

/// Environment map of a model as linear radiance, top row first.
template <class Real>
EnvImage model_envmap(const SceneModel<Real>& model) {
  return {model.envmap().height(), model.envmap().width(), model.envmap().radiance_values(), {}};
}

/// Renders the test split (or the first `max_views` views) and scores it.
/// MAE uses pixels with gt alpha >= 0.5 and a defined predicted normal; it is
/// 0 with normal_pixels = 0 when the dataset has no normals. EPSNR is 0 when
/// there is no ground-truth environment.
template <class Real>
Evaluation evaluate(const SceneModel<Real>& model, const SceneDataset& ds, const RenderConfig& render,
                    std::uint64_t seed, std::size_t max_views = 0, bool keep_images = false) {
  const auto& frames = ds.test.empty() ? ds.train : ds.test;
  const std::size_t views = max_views ? std::min(max_views, frames.size()) : frames.size();
  if (views == 0) throw std::invalid_argument("evaluate: dataset has no views");
  std::vector<double> pred_all, gt_all;
  double ssim_sum = 0.0, mae_sum = 0.0;
  std::size_t mae_pixels = 0;
  Evaluation ev;
  for (std::size_t v = 0; v < views; ++v) {
    const auto& f = frames[v];
    auto img = render_image(model, f.camera, render, seed, (1ULL << 40) + v * f.rgb.size());
    std::vector<double> pred(img.rgb.size());
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = std::clamp(img.rgb[i], 0.0, 1.0);
    pred_all.insert(pred_all.end(), pred.begin(), pred.end());
    gt_all.insert(gt_all.end(), f.rgb.begin(), f.rgb.end());
    ssim_sum += ssim(pred, f.rgb, img.height, img.width);
    if (!f.normal.empty()) {
      std::vector<bool> mask(img.width * img.height);
      std::size_t count = 0;
      for (std::size_t p = 0; p < mask.size(); ++p) {
        mask[p] = f.alpha[p] >= 0.5 && img.normal_defined[p];
        count += mask[p];
      }
      if (count) {
        mae_sum += mae_normals(img.normal, f.normal, mask) * static_cast<double>(count);
        mae_pixels += count;
      }
    }
    if (keep_images) ev.images.push_back(std::move(img));
  }
  ev.metrics.psnr = psnr(pred_all, gt_all);
  ev.metrics.ssim = ssim_sum / static_cast<double>(views);
  ev.metrics.mae = mae_pixels ? mae_sum / static_cast<double>(mae_pixels) : 0.0;
  ev.metrics.normal_pixels = mae_pixels;
  ev.metrics.pixels = pred_all.size() / 3;
  if (ds.envmap) {
    const auto env = model_envmap(model);
    ev.metrics.epsnr = epsnr(env.radiance, env.height, env.width, ds.envmap->radiance, ds.envmap->height,
                             ds.envmap->width);
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LossRecord {
  std::size_t iteration = 0;
  double total = 0.0, photometric = 0.0, orientation = 0.0, entropy = 0.0;
  std::size_t shaded = 0;  // samples shaded in this batch
  bool operator==(const LossRecord&) const = default;
};

struct EvalRecord {
  std::size_t iteration = 0;
  MetricBundle metrics;
};

struct TrainResult {
  SceneModel<float> model;
  std::vector<LossRecord> losses;
  std::vector<EvalRecord> evals;
  double seconds = 0.0;
};

struct TrainOptions {
  /// Iterations to run; defaults to config.iterations.
  std::optional<std::size_t> iterations;
  /// Only the photometric term (fine-tuning).
  bool photometric_only = false;
  /// Keep the model with the best eval PSNR, including before the first step.
  bool keep_best = false;
  /// Seed for evaluation renders; defaults to config.seed.
  std::optional<std::uint64_t> eval_seed;
  std::function<void(const LossRecord&)> on_step;
  std::function<void(const EvalRecord&)> on_eval;
};

/// Random training rays: batch `iteration` draws (frame, pixel) pairs from a
/// stream keyed by (seed, iteration).
inline void sample_batch(const SceneDataset& ds, std::size_t batch, std::uint64_t seed, std::size_t iteration,
                         RayBatch& rays, std::vector<float>& target) {
  rays = {};
  target.clear();
  Rng rng(seed, "batch", iteration);
  const std::size_t per = ds.pixels_per_frame();
  const std::size_t total = ds.train.size() * per;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t id = static_cast<std::size_t>(rng() % total);
    const auto& f = ds.train[id / per];
    const std::size_t p = id % per;
    rays.push(f.camera.origin(), f.camera.direction(p % ds.width, p / ds.width), id);
    for (int c = 0; c < 3; ++c) target.push_back(static_cast<float>(f.rgb[p * 3 + c]));
  }
}

namespace detail {

/// Splits a model's groups so that decoder heads get their own learning rate.
struct SplitGroups {
  std::vector<ParamGroup<float>> grids, heads;
};

inline SplitGroups split_groups(SceneModel<float>& model) {
  SplitGroups out;
  for (GroupName g : kAllGroups) {
    ParamGroup<float> grid{g, {}, model.trainable(g)}, head{g, {}, model.trainable(g)};
    for (auto& [name, t] : model.named_tensors(g)) {
      const bool is_head = name.find(".weight") != std::string::npos || name.find(".bias") != std::string::npos;
      (is_head ? head : grid).tensors.push_back(*t);
    }
    if (!grid.tensors.empty()) out.grids.push_back(std::move(grid));
    if (!head.tensors.empty()) out.heads.push_back(std::move(head));
  }
  return out;
}

}  // namespace detail

/// Optimizes `model` on the training split. Copies of a SceneModel share
/// tensor storage, so pass a deep copy to keep the original.
inline TrainResult train_model(SceneModel<float> model, const SceneDataset& ds, const TrainConfig& config,
                               const TrainOptions& options = {}) {
  config.validate();
  if (ds.train.empty()) throw std::invalid_argument("train: dataset has no training frames");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t iterations = options.iterations.value_or(config.iterations);
  TrainResult result;

  RenderConfig rc = config.render;
  rc.workers = 1;
  RenderConfig ec = config.eval_render;
  ec.workers = config.worker_count();

  auto groups = detail::split_groups(model);
  AdamState<float> grid_state, head_state;
  for (GroupName g : kAllGroups) {
    grid_state.learning_rate[g] = g == GroupName::kEnvmap ? config.lr_env : config.lr_grid;
    head_state.learning_rate[g] = config.lr_mlp;
  }

  std::optional<SceneModel<float>> best;
  double best_psnr = -1.0;
  auto run_eval = [&](std::size_t it) {
    EvalRecord rec{it, evaluate(model, ds, ec, options.eval_seed.value_or(config.seed), config.eval_views).metrics};
    result.evals.push_back(rec);
    if (options.on_eval) options.on_eval(rec);
    if (options.keep_best && rec.metrics.psnr > best_psnr) {
      best_psnr = rec.metrics.psnr;
      best = model.deep_copy();
    }
  };
  if (options.keep_best) run_eval(0);

  RayBatch rays;
  std::vector<float> target_values;
  for (std::size_t it = 0; it < iterations; ++it) {
    const double decay = std::pow(config.lr_decay, static_cast<double>(it) / std::max<std::size_t>(iterations, 1));
    for (GroupName g : kAllGroups) {
      grid_state.learning_rate[g] = decay * (g == GroupName::kEnvmap ? config.lr_env : config.lr_grid);
      head_state.learning_rate[g] = decay * config.lr_mlp;
    }
    sample_batch(ds, config.batch_rays, config.seed, it, rays, target_values);
    const auto target = ad::Tensor<float>::from({rays.size(), 3}, target_values);
    const auto out = render_rays(model, rays, rc, mix64(config.seed ^ mix64(it + 1)));

    LossRecord rec;
    rec.iteration = it;
    rec.shaded = out.sample_ray.size();
    auto loss = photometric_loss(out.rgb, target) * static_cast<float>(config.lambda_photometric);
    rec.photometric = static_cast<double>(loss[0]);
    if (!options.photometric_only) {
      if (config.lambda_orientation > 0.0 && out.sample_weight.rows() > 0) {
        std::vector<Vec3> dirs(out.sample_ray.size());
        for (std::size_t s = 0; s < dirs.size(); ++s) dirs[s] = rays.directions[out.sample_ray[s]];
        const auto o = orientation_loss(out.sample_weight, out.sample_normal,
                                        detail::constant_rows<float>(dirs), rays.size());
        rec.orientation = static_cast<double>(o[0]);
        loss = loss + o * static_cast<float>(config.lambda_orientation);
      }
      if (config.lambda_entropy > 0.0) {
        const auto e = opacity_entropy(out.opacity);
        rec.entropy = static_cast<double>(e[0]);
        loss = loss + e * static_cast<float>(config.lambda_entropy);
      }
    }
    rec.total = static_cast<double>(loss[0]);
    if (!std::isfinite(rec.total)) {
      std::ostringstream os;
      os << "training diverged at iteration " << it << ": loss " << rec.total << " (photometric "
         << rec.photometric << ", orientation " << rec.orientation << ", entropy " << rec.entropy << ")";
      auto bad = [](const ad::Tensor<float>& t) {
        std::size_t n = 0;
        if (t.defined())
          for (float v : t.data()) n += !std::isfinite(v);
        return n;
      };
      os << "; non-finite entries: rgb " << bad(out.rgb) << ", opacity " << bad(out.opacity) << ", background "
         << bad(out.background) << ", albedo " << bad(out.albedo) << ", roughness " << bad(out.roughness) << ", f0 "
         << bad(out.f0) << ", sample normals " << bad(out.sample_normal);
      throw TrainingDiverged(os.str());
    }
    ad::backward(loss);
    for (auto* part : {&groups.grids, &groups.heads}) {
      auto grads = collect_gradients(*part);
      for (auto& g : *part)
        for (auto& t : g.tensors) t.zero_grad();
      adam_step(*part, grads, part == &groups.grids ? grid_state : head_state);
    }
    result.losses.push_back(rec);
    if (options.on_step) options.on_step(rec);
    if (config.eval_every && (it + 1) % config.eval_every == 0 && it + 1 < iterations) run_eval(it + 1);
  }
  if (options.keep_best || config.eval_every) run_eval(iterations);
  result.model = options.keep_best && best ? std::move(*best) : std::move(model);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// Trains a fresh model from the config seed.
inline TrainResult train(const SceneDataset& ds, const TrainConfig& config, const TrainOptions& options = {}) {
  return train_model(SceneModel<float>(config.model, config.seed), ds, config, options);
}

}  // namespace mfield
