#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfield/harness/finetune.hpp"
#include "mfield/io/report.hpp"

namespace mfield {

inline const std::vector<GroupName>& default_finetune_groups() {
  static const std::vector<GroupName> groups = {GroupName::kAlbedo, GroupName::kRoughness, GroupName::kF0,
                                                GroupName::kDensity, GroupName::kEnvmap};
  return groups;
}

struct MatrixOptions {
  std::vector<PerturbationSpec> specs = default_matrix_specs();
  std::vector<GroupName> groups = default_finetune_groups();
  /// Fine-tune iterations per cell; defaults to config.finetune_iterations.
  std::optional<std::size_t> iterations;
  /// Execution order of the fine-tune cells as indices into the row-major
  /// (spec, group) list. Empty means row-major. Results do not depend on it.
  std::vector<std::size_t> order;
  /// When set, CSV, JSON and per-cell renders are written here.
  std::filesystem::path out_dir;
  /// Test view rendered for the per-cell images.
  std::size_t image_view = 0;
  std::function<void(const MatrixCell&)> on_cell;
};

/// {"target": "albedo", "m": 0.5}, {"target": "density", "sigma_d": 1.05,
/// "seed": 0} or {"target": "envmap", "blur": [301, 300]}; an optional
/// "direction" overrides the one implied by the values.
inline PerturbationSpec perturbation_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("target")) throw PerturbationError("perturbation needs a \"target\"");
  const auto target = parse_target(j.at("target").get<std::string>());
  PerturbationSpec s;
  try {
    switch (target) {
      case PerturbTarget::kDensity:
        s = PerturbationSpec::noise(j.value("sigma_d", 0.0), j.value("seed", std::uint64_t{0}));
        break;
      case PerturbTarget::kEnvmap: {
        const auto b = j.value("blur", nlohmann::json::array({1, 1.0}));
        if (!b.is_array() || b.size() != 2) throw PerturbationError("\"blur\" must be [size, sigma]");
        s = PerturbationSpec::blur(b[0].get<std::size_t>(), b[1].get<double>());
        break;
      }
      default: s = PerturbationSpec::scale(target, j.value("m", 1.0));
    }
  } catch (const nlohmann::json::exception& e) {
    throw PerturbationError(std::string("bad perturbation: ") + e.what());
  }
  if (j.contains("direction")) s.direction = parse_direction(j.at("direction").get<std::string>());
  return s;
}

inline nlohmann::json to_json(const PerturbationSpec& s) {
  nlohmann::json j{{"target", std::string(to_string(s.target))}, {"direction", std::string(to_string(s.direction))}};
  switch (s.target) {
    case PerturbTarget::kDensity: j["sigma_d"] = s.sigma_d; j["seed"] = s.seed; break;
    case PerturbTarget::kEnvmap: j["blur"] = {s.blur_size, s.blur_sigma}; break;
    default: j["m"] = s.multiplier;
  }
  return j;
}

/// Reads {"rows": [spec...], "groups": ["albedo", ...]}; absent keys keep `base`.
inline MatrixOptions matrix_options_from_json(const nlohmann::json& j, MatrixOptions base = {}) {
  if (j.contains("rows")) {
    base.specs.clear();
    for (const auto& r : j.at("rows")) base.specs.push_back(perturbation_from_json(r));
  }
  if (j.contains("groups")) {
    base.groups.clear();
    for (const auto& g : j.at("groups")) base.groups.push_back(parse_group(g.get<std::string>()));
  }
  return base;
}

inline std::string row_key(const PerturbationSpec& s) {
  return std::string(to_string(s.target)) + "_" + std::string(to_string(s.direction) == "n/a" ? "na" : to_string(s.direction));
}

namespace detail {

inline void save_cell_image(const std::filesystem::path& path, const SceneModel<float>& model, const SceneDataset& ds,
                            const TrainConfig& config, std::size_t view) {
  const auto& frames = ds.test.empty() ? ds.train : ds.test;
  const auto& f = frames.at(std::min(view, frames.size() - 1));
  RenderConfig rc = config.eval_render;
  rc.workers = config.worker_count();
  const auto img = render_image(model, f.camera, rc, config.seed, (1ULL << 40) + view * f.rgb.size());
  std::filesystem::create_directories(path.parent_path());
  write_png_linear(path, img.width, img.height, img.rgb);
}

inline void write_grid(const std::filesystem::path& dir, const std::vector<std::vector<std::filesystem::path>>& rows) {
  std::size_t w = 0, h = 0, cols = 0;
  for (const auto& r : rows) {
    cols = std::max(cols, r.size());
    for (const auto& p : r) {
      if (p.empty()) continue;
      const auto img = read_png(p);
      w = std::max(w, img.width);
      h = std::max(h, img.height);
    }
  }
  if (w == 0 || cols == 0) return;
  Image grid{w * cols, h * rows.size(), 3, std::vector<double>(w * cols * h * rows.size() * 3, 1.0)};
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (rows[r][c].empty()) continue;
      const auto img = read_png(rows[r][c]);
      for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
          for (std::size_t k = 0; k < 3; ++k) {
            grid.data[((r * h + y) * grid.width + c * w + x) * 3 + k] = img.data[(y * img.width + x) * img.channels + k];
          }
    }
  write_png_raw(dir / "grid.png", grid);
}

}  // namespace detail

/// Runs the freeze-one / fine-tune-one protocol against one baseline.
/// Cells: the baseline row, then per manipulation a no-fine-tune cell and one
/// cell per fine-tuned group. Every cell starts from the same baseline and its
/// seed comes from its identity, so the result is independent of `order`.
inline ExperimentMatrix run_matrix(const SceneModel<float>& baseline, const SceneDataset& ds, const TrainConfig& config,
                                   const MatrixOptions& options = {}) {
  {
    std::set<std::string> keys;
    for (const auto& s : options.specs) {
      if (!keys.insert(row_key(s)).second) throw std::invalid_argument("duplicate matrix row '" + row_key(s) + "'");
    }
  }
  const std::size_t n_specs = options.specs.size(), n_groups = options.groups.size();
  std::vector<std::size_t> order = options.order;
  if (order.empty()) {
    order.resize(n_specs * n_groups);
    std::iota(order.begin(), order.end(), 0);
  } else {
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted[i] != i || sorted.size() != n_specs * n_groups) {
        throw std::invalid_argument("matrix order must be a permutation of the fine-tune cells");
      }
    }
  }

  const bool write = !options.out_dir.empty();
  const auto cell_dir = options.out_dir / "cells";
  auto image_path = [&](const std::string& row, const std::string& col) {
    return cell_dir / (row + "__" + col + ".png");
  };
  RenderConfig ec = config.eval_render;
  ec.workers = config.worker_count();

  std::vector<MatrixCell> none_cells(n_specs), tuned(n_specs * n_groups);
  auto emit = [&](const MatrixCell& c) {
    if (options.on_cell) options.on_cell(c);
  };

  MatrixCell base{ds.name, "none", "n/a", "none", evaluate(baseline, ds, ec, config.seed, config.eval_views).metrics};
  emit(base);
  if (write) detail::save_cell_image(image_path("baseline", "none"), baseline, ds, config, options.image_view);

  // The no-fine-tune column goes first.
  for (std::size_t i = 0; i < n_specs; ++i) {
    const auto& s = options.specs[i];
    const auto perturbed = attach(baseline, s);
    none_cells[i] = {ds.name, std::string(to_string(s.target)), std::string(to_string(s.direction)), "none",
                     evaluate(perturbed, ds, ec, config.seed, config.eval_views).metrics};
    emit(none_cells[i]);
    if (write) detail::save_cell_image(image_path(row_key(s), "none"), perturbed, ds, config, options.image_view);
  }

  for (std::size_t k : order) {
    const auto& s = options.specs[k / n_groups];
    const GroupName g = options.groups[k % n_groups];
    auto r = finetune(baseline, ds, s, g, config, options.iterations);
    tuned[k] = {ds.name, std::string(to_string(s.target)), std::string(to_string(s.direction)),
                std::string(to_string(g)), r.after};
    emit(tuned[k]);
    if (write) {
      detail::save_cell_image(image_path(row_key(s), std::string(to_string(g))), r.model, ds, config,
                              options.image_view);
    }
  }

  ExperimentMatrix m;
  m.cells.push_back(base);
  for (std::size_t i = 0; i < n_specs; ++i) {
    m.cells.push_back(none_cells[i]);
    for (std::size_t j = 0; j < n_groups; ++j) m.cells.push_back(tuned[i * n_groups + j]);
  }

  if (write) {
    std::filesystem::create_directories(options.out_dir);
    write_text(options.out_dir / "matrix.csv", matrix_csv(m));
    write_text(options.out_dir / "matrix.json", matrix_json(m).dump(2) + "\n");
    // Grid layout: one row per manipulation, columns = no-fine-tune then groups.
    std::vector<std::vector<std::filesystem::path>> rows;
    nlohmann::json layout;
    layout["columns"] = nlohmann::json::array({"none"});
    for (GroupName g : options.groups) layout["columns"].push_back(std::string(to_string(g)));
    layout["rows"] = nlohmann::json::array();
    for (const auto& s : options.specs) {
      std::vector<std::filesystem::path> row{image_path(row_key(s), "none")};
      for (GroupName g : options.groups) row.push_back(image_path(row_key(s), std::string(to_string(g))));
      nlohmann::json files = nlohmann::json::array();
      for (const auto& p : row) files.push_back(std::filesystem::relative(p, options.out_dir).string());
      layout["rows"].push_back({{"label", s.label()}, {"spec", s.describe()}, {"files", files}});
      rows.push_back(std::move(row));
    }
    layout["baseline"] = std::filesystem::relative(image_path("baseline", "none"), options.out_dir).string();
    write_text(options.out_dir / "grid.json", layout.dump(2) + "\n");
    detail::write_grid(options.out_dir, rows);
  }
  return m;
}

/// Cross-scene means of matching cells, once weighting every scene equally
/// (scene = "mean_by_scene") and once by test-view count ("mean_by_views").
inline ExperimentMatrix summarize_matrices(const std::vector<std::pair<ExperimentMatrix, std::size_t>>& scenes) {
  ExperimentMatrix out;
  if (scenes.empty()) return out;
  for (const char* mode : {"mean_by_scene", "mean_by_views"}) {
    const bool by_views = std::string(mode) == "mean_by_views";
    for (const auto& proto : scenes.front().first.cells) {
      MatrixCell c{mode, proto.manipulated, proto.direction, proto.finetuned, {}};
      double wsum = 0.0;
      for (const auto& [m, views] : scenes) {
        const auto* other = m.find(proto.manipulated, proto.direction, proto.finetuned);
        if (!other) throw std::invalid_argument("scenes disagree on matrix layout");
        const double w = by_views ? static_cast<double>(views) : 1.0;
        c.metrics.psnr += w * other->metrics.psnr;
        c.metrics.ssim += w * other->metrics.ssim;
        c.metrics.mae += w * other->metrics.mae;
        c.metrics.epsnr += w * other->metrics.epsnr;
        wsum += w;
      }
      if (wsum <= 0.0) throw std::invalid_argument("summary weights sum to zero");
      c.metrics.psnr /= wsum;
      c.metrics.ssim /= wsum;
      c.metrics.mae /= wsum;
      c.metrics.epsnr /= wsum;
      out.cells.push_back(c);
    }
  }
  return out;
}

}  // namespace mfield
