#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfield/harness/train.hpp"
#include "mfield/perturb/perturb.hpp"

namespace mfield {

/// A frozen group changed during fine-tuning.
struct FreezeViolation : std::logic_error {
  using std::logic_error::logic_error;
};

struct FinetuneResult {
  SceneModel<float> model;  // perturbed, then fine-tuned (best eval)
  MetricBundle before;      // perturbed, no fine-tuning
  MetricBundle after;       // returned model
  std::size_t best_iteration = 0;
  std::vector<LossRecord> losses;
  std::vector<EvalRecord> evals;
};

/// Seed for one (manipulation, fine-tuned group) cell. Depends only on the
/// cell identity, never on execution order.
inline std::uint64_t cell_seed(std::uint64_t seed, const PerturbationSpec& spec, std::string_view finetuned) {
  const std::string id = spec.describe() + "|" + std::string(to_string(spec.direction)) + "|" + std::string(finetuned);
  return mix64(seed ^ hash_tag(id));
}

namespace detail {

using GroupSnapshot = std::vector<std::pair<std::string, std::vector<float>>>;

inline GroupSnapshot snapshot_except(SceneModel<float>& model, GroupName keep) {
  GroupSnapshot out;
  for (GroupName g : kAllGroups) {
    if (g == keep) continue;
    for (auto& [name, t] : model.named_tensors(g)) out.emplace_back(name, std::vector<float>(t->data().begin(), t->data().end()));
  }
  return out;
}

}  // namespace detail

/// Applies `spec` to a copy of `baseline`, unfreezes exactly `unfrozen`, and
/// optimizes the photometric loss, keeping the iterate with the best test
/// PSNR (the unperturbed-by-training start included). The baseline is never
/// modified. Throws FreezeViolation if a frozen group moved.
inline FinetuneResult finetune(const SceneModel<float>& baseline, const SceneDataset& ds, const PerturbationSpec& spec,
                               GroupName unfrozen, const TrainConfig& config,
                               std::optional<std::size_t> iterations = std::nullopt) {
  auto model = attach(baseline.deep_copy(), spec);
  model.train_only(unfrozen);
  const auto frozen = detail::snapshot_except(model, unfrozen);

  TrainConfig cfg = config;
  cfg.seed = cell_seed(config.seed, spec, to_string(unfrozen));
  const std::size_t iters = iterations.value_or(config.finetune_iterations);
  if (cfg.eval_every == 0) cfg.eval_every = std::max<std::size_t>(1, iters / 5);

  TrainOptions opt;
  opt.iterations = iters;
  opt.photometric_only = true;
  opt.keep_best = true;
  opt.eval_seed = config.seed;
  auto trained = train_model(model, ds, cfg, opt);

  FinetuneResult out;
  out.model = std::move(trained.model);
  out.losses = std::move(trained.losses);
  out.evals = std::move(trained.evals);
  out.before = out.evals.front().metrics;
  // train_model keeps the first strict improvement; mirror that choice here.
  const EvalRecord* best = &out.evals.front();
  for (const auto& e : out.evals)
    if (e.metrics.psnr > best->metrics.psnr) best = &e;
  out.after = best->metrics;
  out.best_iteration = best->iteration;

  const auto now = detail::snapshot_except(out.model, unfrozen);
  for (std::size_t i = 0; i < frozen.size(); ++i) {
    if (now[i].second != frozen[i].second) {
      throw FreezeViolation("frozen tensor '" + frozen[i].first + "' changed while fine-tuning " +
                            std::string(to_string(unfrozen)));
    }
  }
  out.model.train_only(unfrozen);
  return out;
}

/// String overload; rejects unknown group names.
inline FinetuneResult finetune(const SceneModel<float>& baseline, const SceneDataset& ds, const PerturbationSpec& spec,
                               std::string_view unfrozen, const TrainConfig& config,
                               std::optional<std::size_t> iterations = std::nullopt) {
  return finetune(baseline, ds, spec, parse_group(unfrozen), config, iterations);
}

}  // namespace mfield
