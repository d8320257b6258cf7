// mfield: train, perturb, fine-tune and evaluate neural microfacet fields.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mfield/harness/consistency.hpp"
#include "mfield/harness/matrix.hpp"
#include "mfield/harness/oracle.hpp"
#include "mfield/io/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace mfield;

namespace {

struct Flags {
  std::string scene, config, checkpoint, out, target, finetune, blur, kind = "lambertian_sphere";
  std::vector<std::string> scenes;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iters;
  std::optional<double> m, sigma_d;
  double sky_intensity = 1.0;
  bool desk = false;
};

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

/// Preset (full, or desk with --desk), then the checkpoint's recorded config,
/// then --config, then --seed.
TrainConfig resolve_config(const Flags& f, const nlohmann::json* recorded = nullptr) {
  TrainConfig c = f.desk ? TrainConfig::desk() : TrainConfig::full();
  if (recorded && !recorded->empty()) c = train_config_from_json(*recorded, c);
  if (!f.config.empty()) c = train_config_from_json(read_json(f.config), c);
  if (f.seed) c.seed = *f.seed;
  c.validate();
  return c;
}

PerturbationSpec spec_from_flags(const Flags& f) {
  if (f.target.empty()) throw std::invalid_argument("--target is required");
  const auto target = parse_target(f.target);
  const int given = f.m.has_value() + f.sigma_d.has_value() + !f.blur.empty();
  if (given > 1) throw std::invalid_argument("give only one of --m, --sigma-d, --blur");
  switch (target) {
    case PerturbTarget::kDensity:
      if (f.m || !f.blur.empty()) throw std::invalid_argument("density takes --sigma-d");
      return PerturbationSpec::noise(f.sigma_d.value_or(0.0), f.seed.value_or(0));
    case PerturbTarget::kEnvmap: {
      if (f.m || f.sigma_d) throw std::invalid_argument("envmap takes --blur s,sigma");
      if (f.blur.empty()) return PerturbationSpec::blur(1, 1.0);
      const auto comma = f.blur.find(',');
      if (comma == std::string::npos) throw std::invalid_argument("--blur expects s,sigma");
      const double size = parse_double(f.blur.substr(0, comma), "--blur");
      if (size < 1 || size != static_cast<double>(static_cast<std::size_t>(size))) {
        throw std::invalid_argument("--blur size must be a positive integer");
      }
      return PerturbationSpec::blur(static_cast<std::size_t>(size), parse_double(f.blur.substr(comma + 1), "--blur"));
    }
    default:
      if (f.sigma_d || !f.blur.empty()) throw std::invalid_argument(f.target + " takes --m");
      return PerturbationSpec::scale(target, f.m.value_or(1.0));
  }
}

LoadedCheckpoint<float> require_checkpoint(const Flags& f) {
  if (f.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  return load_checkpoint<float>(f.checkpoint);
}

SceneDataset require_scene(const Flags& f) {
  if (f.scene.empty()) throw std::invalid_argument("--scene is required");
  return load_scene(f.scene);
}

void require_out(const Flags& f) {
  if (f.out.empty()) throw std::invalid_argument("--out is required");
}

std::string metrics_line(const MetricBundle& m) {
  std::ostringstream os;
  os << "psnr " << m.psnr << " ssim " << m.ssim << " mae " << m.mae << " epsnr " << m.epsnr;
  return os.str();
}

nlohmann::json metrics_json(const MetricBundle& m) {
  return {{"psnr", m.psnr}, {"ssim", m.ssim}, {"mae", m.mae}, {"epsnr", m.epsnr}, {"pixels", m.pixels},
          {"normal_pixels", m.normal_pixels}};
}

RenderConfig eval_render(const TrainConfig& c) {
  RenderConfig r = c.eval_render;
  r.workers = c.worker_count();
  return r;
}

// ---------------------------------------------------------------------------

int cmd_train(const Flags& f) {
  require_out(f);
  const auto ds = require_scene(f);
  auto cfg = resolve_config(f);
  if (f.iters) cfg.iterations = *f.iters;
  TrainOptions opt;
  opt.on_step = [&](const LossRecord& r) {
    if (r.iteration % 100 == 0 || r.iteration + 1 == cfg.iterations) {
      std::fprintf(stderr, "it %zu loss %.6f photometric %.6f shaded %zu\n", r.iteration, r.total, r.photometric,
                   r.shaded);
    }
  };
  opt.on_eval = [](const EvalRecord& e) {
    std::fprintf(stderr, "eval it %zu %s\n", e.iteration, metrics_line(e.metrics).c_str());
  };
  auto res = train(ds, cfg, opt);
  save_checkpoint(f.out, res.model, {cfg.iterations, to_json(cfg), {{"scene", ds.name}, {"seconds", res.seconds}}});
  std::ostringstream csv;
  csv << "iteration,total,photometric,orientation,entropy,shaded\n";
  for (const auto& r : res.losses) {
    csv << r.iteration << "," << format_double(r.total) << "," << format_double(r.photometric) << ","
        << format_double(r.orientation) << "," << format_double(r.entropy) << "," << r.shaded << "\n";
  }
  write_text(fs::path(f.out) / "losses.csv", csv.str());
  const auto ev = evaluate(res.model, ds, eval_render(cfg), cfg.seed);
  write_text(fs::path(f.out) / "eval.json", metrics_json(ev.metrics).dump(2) + "\n");
  std::printf("%s\ntrained %zu iterations in %.1f s\n", metrics_line(ev.metrics).c_str(), cfg.iterations, res.seconds);
  return 0;
}

int cmd_render(const Flags& f) {
  require_out(f);
  const auto ck = require_checkpoint(f);
  const auto ds = require_scene(f);
  const auto cfg = resolve_config(f, &ck.meta.train_config);
  const auto& frames = ds.test.empty() ? ds.train : ds.test;
  fs::create_directories(f.out);
  for (std::size_t v = 0; v < frames.size(); ++v) {
    const auto& fr = frames[v];
    const auto img = render_image(ck.model, fr.camera, eval_render(cfg), cfg.seed, (1ULL << 40) + v * fr.rgb.size());
    const std::string stem = (fs::path(f.out) / ("r_" + std::to_string(v))).string();
    write_png_linear(stem + ".png", img.width, img.height, img.rgb);
    std::vector<double> normal(img.normal.size()), rough(img.roughness.size() * 3);
    for (std::size_t i = 0; i < normal.size(); ++i) normal[i] = img.normal[i] * 0.5 + 0.5;
    for (std::size_t i = 0; i < rough.size(); ++i) rough[i] = img.roughness[i / 3];
    write_png_raw(stem + "_normal.png", {img.width, img.height, 3, normal});
    write_png_raw(stem + "_albedo.png", {img.width, img.height, 3, img.albedo});
    write_png_raw(stem + "_roughness.png", {img.width, img.height, 3, rough});
    write_png_raw(stem + "_f0.png", {img.width, img.height, 3, img.f0});
  }
  const auto env = model_envmap(ck.model);
  write_pfm(fs::path(f.out) / "env.pfm", {env.width, env.height, 3, env.radiance});
  std::printf("rendered %zu views to %s\n", frames.size(), f.out.c_str());
  return 0;
}

int cmd_eval(const Flags& f) {
  const auto ck = require_checkpoint(f);
  const auto ds = require_scene(f);
  const auto cfg = resolve_config(f, &ck.meta.train_config);
  const auto ev = evaluate(ck.model, ds, eval_render(cfg), cfg.seed);
  std::printf("%s\n", metrics_line(ev.metrics).c_str());
  if (!f.out.empty()) write_text(f.out, metrics_json(ev.metrics).dump(2) + "\n");
  return 0;
}

int cmd_perturb(const Flags& f) {
  require_out(f);
  const auto ck = require_checkpoint(f);
  const auto spec = spec_from_flags(f);
  const auto perturbed = attach(ck.model, spec);
  auto meta = ck.meta;
  meta.extra["perturbation"] = to_json(spec);
  save_checkpoint(f.out, perturbed, meta);
  std::printf("applied %s\n", spec.describe().c_str());
  if (!f.scene.empty()) {
    const auto cfg = resolve_config(f, &ck.meta.train_config);
    std::printf("%s\n", metrics_line(evaluate(perturbed, load_scene(f.scene), eval_render(cfg), cfg.seed).metrics).c_str());
  }
  return 0;
}

int cmd_finetune(const Flags& f) {
  require_out(f);
  if (f.finetune.empty()) throw std::invalid_argument("--finetune is required");
  const auto ck = require_checkpoint(f);
  const auto ds = require_scene(f);
  const auto cfg = resolve_config(f, &ck.meta.train_config);
  const auto spec = spec_from_flags(f);
  const auto r = finetune(ck.model, ds, spec, f.finetune, cfg, f.iters);
  auto meta = ck.meta;
  meta.extra["perturbation"] = to_json(spec);
  meta.extra["finetuned"] = f.finetune;
  meta.extra["best_iteration"] = r.best_iteration;
  save_checkpoint(f.out, r.model, meta);
  write_text(fs::path(f.out) / "finetune.json",
             nlohmann::json{{"spec", to_json(spec)},
                            {"finetuned", f.finetune},
                            {"before", metrics_json(r.before)},
                            {"after", metrics_json(r.after)},
                            {"best_iteration", r.best_iteration}}
                     .dump(2) +
                 "\n");
  std::printf("before %s\nafter  %s\n", metrics_line(r.before).c_str(), metrics_line(r.after).c_str());
  return 0;
}

int cmd_matrix(const Flags& f) {
  require_out(f);
  const auto ck = require_checkpoint(f);
  const auto ds = require_scene(f);
  const auto cfg = resolve_config(f, &ck.meta.train_config);
  MatrixOptions opt;
  if (!f.config.empty()) {
    const auto j = read_json(f.config);
    if (j.contains("matrix")) opt = matrix_options_from_json(j.at("matrix"), opt);
  }
  opt.iterations = f.iters;
  opt.out_dir = f.out;
  opt.on_cell = [](const MatrixCell& c) {
    std::fprintf(stderr, "%s %s -> %s: %s\n", c.manipulated.c_str(), c.direction.c_str(), c.finetuned.c_str(),
                 metrics_line(c.metrics).c_str());
  };
  const auto m = run_matrix(ck.model, ds, cfg, opt);
  std::fputs(matrix_csv(m).c_str(), stdout);
  return 0;
}

int cmd_consistency(const Flags& f) {
  require_out(f);
  if (f.scenes.size() < 2) throw std::invalid_argument("consistency needs --scene at least twice");
  std::vector<SceneDataset> sets;
  for (const auto& s : f.scenes) sets.push_back(load_scene(s));
  auto cfg = resolve_config(f);
  if (f.iters) cfg.iterations = *f.iters;
  const auto rep = consistency_experiment(sets, cfg);
  write_consistency(f.out, rep);
  for (const char* p : kConsistencyProperties) {
    std::printf("%s mean %.6f std %.6f\n", p, rep.mean_value.at(p), rep.mean_stddev.at(p));
  }
  return 0;
}

int cmd_oracle_gen(const Flags& f) {
  require_out(f);
  OracleParams p;
  p.kind = parse_oracle_kind(f.kind);
  p.sky.intensity = f.sky_intensity;
  const auto scene = oracle_scene(p);
  const auto& ds = scene.dataset;
  write_transforms(f.out, "train", ds.train, ds.fov_x);
  write_transforms(f.out, "test", ds.test, ds.fov_x);
  write_pfm(fs::path(f.out) / "env.pfm", {ds.envmap->width, ds.envmap->height, 3, ds.envmap->radiance});
  const auto& t = scene.truth;
  write_text(fs::path(f.out) / "truth.json", nlohmann::json{{"kind", std::string(to_string(t.kind))},
                                                            {"albedo", t.albedo},
                                                            {"roughness", t.roughness},
                                                            {"f0", t.f0},
                                                            {"center", t.center},
                                                            {"radius", t.radius}}
                                                     .dump(2) +
                                                 "\n");
  std::printf("wrote %zu train and %zu test views to %s\n", ds.train.size(), ds.test.size(), f.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural microfacet fields: inverse rendering and property-compensation experiments"};
  app.require_subcommand(1);
  Flags f;

  auto scene = [&](CLI::App* c) { c->add_option("--scene", f.scene, "Scene directory (transforms_*.json)"); };
  auto config = [&](CLI::App* c) {
    c->add_option("--config", f.config, "JSON config mirroring TrainConfig (plus \"matrix\" rows)");
    c->add_flag("--desk", f.desk, "Desk-scale preset instead of the full one");
    c->add_option("--seed", f.seed, "Random seed");
  };
  auto checkpoint = [&](CLI::App* c) { c->add_option("--checkpoint", f.checkpoint, "Checkpoint directory"); };
  auto out = [&](CLI::App* c) { c->add_option("--out", f.out, "Output path"); };
  auto iters = [&](CLI::App* c) { c->add_option("--iters", f.iters, "Iteration count"); };
  auto spec = [&](CLI::App* c) {
    c->add_option("--target", f.target, "Manipulated property: albedo, roughness, f0, density, envmap");
    c->add_option("--m", f.m, "Multiplier for albedo, roughness or f0");
    c->add_option("--sigma-d", f.sigma_d, "Std-dev of Gaussian noise on density coefficients");
    c->add_option("--blur", f.blur, "Envmap Gaussian blur as size,sigma");
  };

  std::vector<std::pair<CLI::App*, int (*)(const Flags&)>> commands;
  auto add = [&](const char* name, const char* help, int (*fn)(const Flags&)) {
    auto* c = app.add_subcommand(name, help);
    commands.emplace_back(c, fn);
    return c;
  };

  auto* train_c = add("train", "Train a model on a scene", cmd_train);
  scene(train_c), config(train_c), out(train_c), iters(train_c);
  auto* render_c = add("render", "Render test views and property buffers", cmd_render);
  scene(render_c), config(render_c), checkpoint(render_c), out(render_c);
  auto* eval_c = add("eval", "Evaluate a checkpoint on the test split", cmd_eval);
  scene(eval_c), config(eval_c), checkpoint(eval_c), out(eval_c);
  auto* perturb_c = add("perturb", "Apply one manipulation and save the result", cmd_perturb);
  scene(perturb_c), config(perturb_c), checkpoint(perturb_c), out(perturb_c), spec(perturb_c);
  auto* finetune_c = add("finetune", "Manipulate one property and fine-tune another", cmd_finetune);
  scene(finetune_c), config(finetune_c), checkpoint(finetune_c), out(finetune_c), iters(finetune_c), spec(finetune_c);
  finetune_c->add_option("--finetune", f.finetune, "Unfrozen group: albedo, roughness, f0, density, envmap");
  auto* matrix_c = add("matrix", "Run the full manipulation x fine-tune matrix", cmd_matrix);
  scene(matrix_c), config(matrix_c), checkpoint(matrix_c), out(matrix_c), iters(matrix_c);
  auto* cons_c = add("consistency", "Compare estimates across illuminations", cmd_consistency);
  cons_c->add_option("--scene", f.scenes, "Scene directory; repeat once per illumination");
  config(cons_c), out(cons_c), iters(cons_c);
  auto* oracle_c = add("oracle-gen", "Write an analytic sphere dataset", cmd_oracle_gen);
  out(oracle_c);
  oracle_c->add_option("--kind", f.kind, "lambertian_sphere or mirror_sphere");
  oracle_c->add_option("--sky-intensity", f.sky_intensity, "Scale of the analytic sky");

  CLI11_PARSE(app, argc, argv);
  try {
    for (auto& [c, fn] : commands)
      if (c->parsed()) return fn(f);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
