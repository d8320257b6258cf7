#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "gradcheck_util.hpp"
#include "mfield/harness/consistency.hpp"
#include "mfield/harness/matrix.hpp"
#include "mfield/harness/oracle.hpp"

using namespace mfield;

namespace {

TrainConfig tiny_config() {
  auto c = TrainConfig::desk();
  c.model.density_resolution = 8;
  c.model.density_rank = 2;
  c.model.appearance_resolution = 8;
  c.model.appearance_rank = 2;
  c.model.material_hidden = 8;
  c.model.specular_hidden = 8;
  c.model.env_height = 8;
  c.model.env_width = 16;
  c.model.density_shift = -2.0;
  c.batch_rays = 32;
  c.render.samples_per_ray = 16;
  c.render.diffuse_samples = 2;
  c.render.specular_samples = 1;
  c.eval_render = c.render;
  c.iterations = 3;
  c.finetune_iterations = 2;
  c.workers = 1;
  return c;
}

const OracleScene& tiny_oracle() {
  static const OracleScene scene = [] {
    OracleParams p;
    p.width = p.height = 24;
    p.train_views = 4;
    p.test_views = 1;
    p.env_height = 8;
    p.env_width = 16;
    return oracle_scene(p);
  }();
  return scene;
}

using Snapshot = std::vector<std::pair<std::string, std::vector<float>>>;

Snapshot snapshot(SceneModel<float> m, std::optional<GroupName> only = std::nullopt) {
  Snapshot out;
  for (auto& [name, t] : m.named_tensors()) {
    if (only && name.rfind(std::string(to_string(*only)) + ".", 0) != 0) continue;
    out.emplace_back(name, std::vector<float>(t->data().begin(), t->data().end()));
  }
  return out;
}

Snapshot without(const Snapshot& s, GroupName g) {
  Snapshot out;
  const std::string prefix = std::string(to_string(g)) + ".";
  for (const auto& e : s)
    if (e.first.rfind(prefix, 0) != 0) out.push_back(e);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- losses

TEST(OrientationLoss, OpposingNormalsCostNothing) {
  const auto w = ad::Tensor<double>::from({2, 1}, {0.7, 0.3});
  const auto n = ad::Tensor<double>::from({2, 3}, {0, 0, 1, 0, 0.6, 0.8});
  const auto d = ad::Tensor<double>::from({2, 3}, {0, 0, -1, 0, 0, -1});
  EXPECT_EQ(orientation_loss(w, n, d, 1).item(), 0.0);
}

TEST(OrientationLoss, ParallelNormalWithUnitWeightCostsOne) {
  const auto w = ad::Tensor<double>::from({1, 1}, {1.0});
  const auto n = ad::Tensor<double>::from({1, 3}, {0, 1, 0});
  const auto d = ad::Tensor<double>::from({1, 3}, {0, 1, 0});
  EXPECT_DOUBLE_EQ(orientation_loss(w, n, d, 1).item(), 1.0);
}

TEST(OrientationLoss, AveragesOverRays) {
  const auto w = ad::Tensor<double>::from({2, 1}, {1.0, 0.5});
  const auto n = ad::Tensor<double>::from({2, 3}, {1, 0, 0, 1, 0, 0});
  const auto d = ad::Tensor<double>::from({2, 3}, {1, 0, 0, 0.6, 0.8, 0});
  // (1 * 1 + 0.5 * 0.36) / 4 rays
  EXPECT_NEAR(orientation_loss(w, n, d, 4).item(), (1.0 + 0.5 * 0.36) / 4.0, 1e-12);
}

TEST(OrientationLoss, GradientPassesFiniteDifferenceCheck) {
  // Normals are random rows; some face the ray, some do not.
  const auto w = mfield::testing::random_leaf({6, 1}, 1, 0.1, 1.0);
  const auto n = mfield::testing::random_leaf({6, 3}, 2);
  const auto d = mfield::testing::random_leaf({6, 3}, 3);
  const auto report = mfield::testing::check_function(
      [](const auto& leaves) { return orientation_loss(leaves[0], leaves[1], leaves[2], 3); }, {w, n, d});
  EXPECT_LT(report.max_relative_error, 1e-3) << report.summary();
}

TEST(OpacityEntropy, HalfOpacityIsLogTwo) {
  const auto o = ad::Tensor<double>::from({2, 1}, {0.5, 0.5});
  EXPECT_NEAR(opacity_entropy(o).item(), std::log(2.0), 1e-12);
}

TEST(OpacityEntropy, SolidAndEmptyAreNearlyFree) {
  const auto o = ad::Tensor<double>::from({2, 1}, {0.0, 1.0});
  EXPECT_LT(opacity_entropy(o).item(), 1e-3);
}

TEST(PhotometricLoss, ClampsPredictionBeforeComparing) {
  const auto pred = ad::Tensor<double>::from({1, 3}, {1.5, -0.2, 0.5});
  const auto target = ad::Tensor<double>::from({1, 3}, {1.0, 0.0, 0.2});
  EXPECT_NEAR(photometric_loss(pred, target).item(), 0.09 / 3.0, 1e-12);
}

// ---------------------------------------------------------------- config

TEST(TrainConfig, JsonRoundTrip) {
  auto c = TrainConfig::desk();
  c.seed = 77;
  c.lambda_entropy = 0.25;
  c.render.samples_per_ray = 33;
  c.model.env_height = 12;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(TrainConfig, RejectsNonPositiveValues) {
  auto j = to_json(TrainConfig::desk());
  j["lr_grid"] = 0.0;
  EXPECT_THROW(train_config_from_json(j), std::invalid_argument);
  j = to_json(TrainConfig::desk());
  j["batch_rays"] = 0;
  EXPECT_THROW(train_config_from_json(j), std::invalid_argument);
}

// ---------------------------------------------------------------- training

TEST(Train, ZeroIterationsReturnsInitialization) {
  auto cfg = tiny_config();
  cfg.iterations = 0;
  const auto res = train(tiny_oracle().dataset, cfg);
  EXPECT_TRUE(res.losses.empty());
  EXPECT_EQ(snapshot(res.model), snapshot(SceneModel<float>(cfg.model, cfg.seed)));
}

TEST(Train, SameSeedGivesIdenticalLossCurves) {
  const auto cfg = tiny_config();
  const auto a = train(tiny_oracle().dataset, cfg);
  const auto b = train(tiny_oracle().dataset, cfg);
  ASSERT_EQ(a.losses.size(), cfg.iterations);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(snapshot(a.model), snapshot(b.model));
}

TEST(Train, DifferentSeedsDiffer) {
  auto cfg = tiny_config();
  const auto a = train(tiny_oracle().dataset, cfg);
  cfg.seed = 1;
  const auto b = train(tiny_oracle().dataset, cfg);
  EXPECT_NE(snapshot(a.model), snapshot(b.model));
}

TEST(Train, TrainingChangesParameters) {
  const auto cfg = tiny_config();
  const auto res = train(tiny_oracle().dataset, cfg);
  EXPECT_NE(snapshot(res.model), snapshot(SceneModel<float>(cfg.model, cfg.seed)));
  for (const auto& r : res.losses) EXPECT_TRUE(std::isfinite(r.total));
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
  auto ds = tiny_oracle().dataset;
  for (auto& f : ds.train) std::fill(f.rgb.begin(), f.rgb.end(), std::numeric_limits<double>::quiet_NaN());
  try {
    train(ds, tiny_config());
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsEmptyDataset) {
  SceneDataset empty;
  EXPECT_THROW(train(empty, tiny_config()), std::invalid_argument);
}

TEST(Train, KeepBestNeverEndsBelowStart) {
  auto cfg = tiny_config();
  cfg.eval_every = 1;
  TrainOptions opt;
  opt.keep_best = true;
  const auto res = train(tiny_oracle().dataset, cfg, opt);
  ASSERT_GE(res.evals.size(), 2u);
  double best = -1.0;
  for (const auto& e : res.evals) best = std::max(best, e.metrics.psnr);
  const auto final_eval = evaluate(res.model, tiny_oracle().dataset, cfg.eval_render, cfg.seed);
  EXPECT_EQ(final_eval.metrics.psnr, best);
  EXPECT_GE(final_eval.metrics.psnr, res.evals.front().metrics.psnr);
}

TEST(Evaluate, ReportsEnvAndNormalsForOracle) {
  const auto cfg = tiny_config();
  const SceneModel<float> model(cfg.model, 0);
  const auto ev = evaluate(model, tiny_oracle().dataset, cfg.eval_render, 0, 0, true);
  EXPECT_EQ(ev.images.size(), 1u);
  EXPECT_EQ(ev.metrics.pixels, 24u * 24u);
  EXPECT_GT(ev.metrics.epsnr, 0.0);
  EXPECT_GE(ev.metrics.ssim, -1.0);
}

// ---------------------------------------------------------------- oracle

TEST(Oracle, RayThroughCenterHitsAtDistanceMinusRadius) {
  const Vec3 c{0.5, -1.0, 2.0}, o{0.5, -1.0, 9.0};
  const auto t = intersect_sphere(o, {0, 0, -1}, c, 1.5);
  ASSERT_TRUE(t);
  EXPECT_NEAR(*t, 7.0 - 1.5, 1e-12);
}

TEST(Oracle, MissAndInsideCases) {
  EXPECT_FALSE(intersect_sphere({0, 3, 5}, {0, 0, -1}, {0, 0, 0}, 1.0));
  EXPECT_FALSE(intersect_sphere({0, 0, 5}, {0, 0, 1}, {0, 0, 0}, 1.0));
  const auto t = intersect_sphere({0, 0, 0}, {1, 0, 0}, {0, 0, 0}, 2.0);
  ASSERT_TRUE(t);
  EXPECT_NEAR(*t, 2.0, 1e-12);
}

TEST(Oracle, WhiteFurnaceGivesAlbedoTimesRadiance) {
  OracleParams p;
  p.sky = Sky::constant(0.7);
  p.quantize = false;
  p.width = p.height = 32;
  p.train_views = 2;
  p.test_views = 0;
  const auto scene = oracle_scene(p);
  std::size_t hits = 0;
  for (const auto& f : scene.dataset.train)
    for (std::size_t px = 0; px < f.alpha.size(); ++px) {
      if (f.alpha[px] < 1.0) continue;
      ++hits;
      for (int c = 0; c < 3; ++c) ASSERT_NEAR(f.rgb[px * 3 + c], p.albedo[c] * 0.7, 2e-3);
    }
  EXPECT_GT(hits, 100u);
}

TEST(Oracle, MirrorSphereReflectsEnvironment) {
  OracleParams p;
  p.kind = OracleKind::kMirrorSphere;
  p.quantize = false;
  p.width = p.height = 48;
  p.train_views = 3;
  p.test_views = 0;
  p.env_height = 128;
  p.env_width = 256;
  const auto scene = oracle_scene(p);
  const auto& env = *scene.dataset.envmap;
  double worst = 0.0;
  for (const auto& f : scene.dataset.train) {
    for (std::size_t y = 0; y < f.camera.height; ++y)
      for (std::size_t x = 0; x < f.camera.width; ++x) {
        const std::size_t px = y * f.camera.width + x;
        if (f.alpha[px] < 1.0) continue;
        const Vec3 d = f.camera.direction(x, y);
        const Vec3 n{f.normal[px * 3], f.normal[px * 3 + 1], f.normal[px * 3 + 2]};
        const auto L = env_lookup(env.radiance, env.height, env.width, normalize(d - n * (2.0 * dot(d, n))));
        for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(L[c] - f.rgb[px * 3 + c]));
      }
  }
  EXPECT_LT(worst, 0.02);
  EXPECT_EQ(scene.truth.roughness, 0.0);
  EXPECT_EQ(scene.truth.f0, (std::array<double, 3>{1, 1, 1}));
}

TEST(Oracle, DefaultSplitAndBuffers) {
  OracleParams p;
  p.width = p.height = 16;
  const auto scene = oracle_scene(p);
  EXPECT_EQ(scene.dataset.train.size(), 16u);
  EXPECT_EQ(scene.dataset.test.size(), 4u);
  for (const auto& f : scene.dataset.test) {
    EXPECT_EQ(f.rgb.size(), 16u * 16u * 3u);
    EXPECT_EQ(f.normal.size(), 16u * 16u * 3u);
    EXPECT_GT(std::accumulate(f.alpha.begin(), f.alpha.end(), 0.0), 0.0);
  }
  ASSERT_TRUE(scene.dataset.envmap);
  EXPECT_EQ(scene.dataset.envmap->radiance.size(), 32u * 64u * 3u);
}

TEST(Oracle, KindNamesRoundTrip) {
  for (auto k : {OracleKind::kLambertianSphere, OracleKind::kMirrorSphere}) EXPECT_EQ(parse_oracle_kind(to_string(k)), k);
  EXPECT_THROW(parse_oracle_kind("cube"), std::invalid_argument);
}

TEST(Oracle, SurvivesDiskRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "mfield_test_oracle_disk";
  std::filesystem::remove_all(dir);
  const auto& ds = tiny_oracle().dataset;
  write_transforms(dir, "train", ds.train, ds.fov_x);
  write_transforms(dir, "test", ds.test, ds.fov_x);
  const auto back = load_scene(dir);
  ASSERT_EQ(back.train.size(), ds.train.size());
  for (std::size_t i = 0; i < ds.train[0].rgb.size(); ++i) {
    // 8-bit sRGB storage; the oracle already quantized through it.
    EXPECT_NEAR(back.train[0].rgb[i], ds.train[0].rgb[i], 1e-9);
  }
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------- fine-tuning

TEST(Finetune, IdentityPerturbationWithoutStepsMatchesBaseline) {
  const auto cfg = tiny_config();
  const auto base = train(tiny_oracle().dataset, cfg).model;
  const auto expected = evaluate(base, tiny_oracle().dataset, cfg.eval_render, cfg.seed).metrics;
  for (GroupName g : default_finetune_groups()) {
    const auto r = finetune(base, tiny_oracle().dataset, PerturbationSpec::scale(PerturbTarget::kAlbedo, 1.0), g, cfg, 0);
    EXPECT_EQ(r.before, expected) << to_string(g);
    EXPECT_EQ(r.after, expected) << to_string(g);
  }
}

TEST(Finetune, FrozenGroupsStayBitIdenticalAndBaselineIsUntouched) {
  const auto cfg = tiny_config();
  const auto base = train(tiny_oracle().dataset, cfg).model;
  const auto before = snapshot(base);
  const auto spec = PerturbationSpec::scale(PerturbTarget::kRoughness, 0.5);
  for (GroupName g : default_finetune_groups()) {
    const auto r = finetune(base, tiny_oracle().dataset, spec, g, cfg, 3);
    EXPECT_EQ(without(snapshot(r.model), g), without(before, g)) << to_string(g);
    EXPECT_EQ(r.model.multipliers().roughness, 0.5);
    EXPECT_TRUE(r.model.trainable(g));
  }
  EXPECT_EQ(snapshot(base), before);
}

TEST(Finetune, PerturbedGroupKeepsPerturbationWhenFrozen) {
  const auto cfg = tiny_config();
  const auto base = train(tiny_oracle().dataset, cfg).model;
  const auto spec = PerturbationSpec::noise(0.5, 3);
  const auto expected = snapshot(attach(base.deep_copy(), spec), GroupName::kDensity);
  const auto r = finetune(base, tiny_oracle().dataset, spec, GroupName::kAlbedo, cfg, 2);
  EXPECT_EQ(snapshot(r.model, GroupName::kDensity), expected);
}

TEST(Finetune, NeverEndsBelowUnfinetunedScore) {
  const auto cfg = tiny_config();
  const auto base = train(tiny_oracle().dataset, cfg).model;
  const auto r =
      finetune(base, tiny_oracle().dataset, PerturbationSpec::blur(5, 2.0), GroupName::kEnvmap, cfg, 4);
  EXPECT_GE(r.after.psnr, r.before.psnr);
}

TEST(Finetune, UnknownGroupIsRejected) {
  const auto cfg = tiny_config();
  const SceneModel<float> base(cfg.model, 0);
  EXPECT_THROW(finetune(base, tiny_oracle().dataset, PerturbationSpec::scale(PerturbTarget::kF0, 1.0), "specular", cfg, 0),
               std::invalid_argument);
}

TEST(Finetune, CellSeedDependsOnIdentityOnly) {
  const auto a = PerturbationSpec::scale(PerturbTarget::kAlbedo, 0.5);
  const auto b = PerturbationSpec::scale(PerturbTarget::kAlbedo, 2.0);
  EXPECT_EQ(cell_seed(1, a, "f0"), cell_seed(1, a, "f0"));
  EXPECT_NE(cell_seed(1, a, "f0"), cell_seed(1, b, "f0"));
  EXPECT_NE(cell_seed(1, a, "f0"), cell_seed(1, a, "density"));
  EXPECT_NE(cell_seed(1, a, "f0"), cell_seed(2, a, "f0"));
}

// ---------------------------------------------------------------- matrix

TEST(Matrix, DefaultProtocolHasFortyEightCellsPlusBaseline) {
  auto cfg = tiny_config();
  const SceneModel<float> base(cfg.model, 0);
  MatrixOptions opt;
  opt.iterations = 0;
  const auto m = run_matrix(base, tiny_oracle().dataset, cfg, opt);
  ASSERT_EQ(m.cells.size(), 1u + 48u);
  EXPECT_EQ(m.cells.front().manipulated, "none");
  std::size_t none_column = 0;
  for (const auto& c : m.cells) none_column += c.finetuned == "none";
  EXPECT_EQ(none_column, 1u + 8u);
  EXPECT_TRUE(m.find("roughness", "under", "envmap"));
  EXPECT_TRUE(m.find("envmap", "n/a", "none"));
}

TEST(Matrix, CsvIsIndependentOfExecutionOrder) {
  const auto cfg = tiny_config();
  const auto base = train(tiny_oracle().dataset, cfg).model;
  MatrixOptions opt;
  opt.specs = {PerturbationSpec::scale(PerturbTarget::kAlbedo, 0.5), PerturbationSpec::blur(5, 2.0)};
  opt.groups = {GroupName::kAlbedo, GroupName::kEnvmap};
  opt.iterations = 2;
  const auto forward = run_matrix(base, tiny_oracle().dataset, cfg, opt);
  opt.order = {3, 1, 2, 0};
  const auto permuted = run_matrix(base, tiny_oracle().dataset, cfg, opt);
  EXPECT_EQ(matrix_csv(forward), matrix_csv(permuted));
}

TEST(Matrix, FineTunedCellsNeverFallBelowTheirRow) {
  const auto cfg = tiny_config();
  const auto base = train(tiny_oracle().dataset, cfg).model;
  MatrixOptions opt;
  opt.specs = {PerturbationSpec::scale(PerturbTarget::kAlbedo, 0.5)};
  opt.iterations = 3;
  const auto m = run_matrix(base, tiny_oracle().dataset, cfg, opt);
  const auto* row = m.find("albedo", "under", "none");
  ASSERT_TRUE(row);
  for (const auto& c : m.cells) {
    if (c.manipulated == "albedo" && c.finetuned != "none") EXPECT_GE(c.metrics.psnr, row->metrics.psnr - 0.1);
  }
}

TEST(Matrix, CappedEvaluationUsesTheSameViewsInEveryColumn) {
  OracleParams p;
  p.width = p.height = 16;
  p.train_views = 4;
  p.test_views = 3;
  p.env_height = 8;
  p.env_width = 16;
  const auto scene = oracle_scene(p);
  auto cfg = tiny_config();
  cfg.eval_views = 1;
  const auto base = train(scene.dataset, cfg).model;
  MatrixOptions opt;
  opt.specs = {PerturbationSpec::scale(PerturbTarget::kAlbedo, 0.5)};
  opt.groups = {GroupName::kAlbedo, GroupName::kEnvmap};
  opt.iterations = 2;
  const auto m = run_matrix(base, scene.dataset, cfg, opt);
  const auto* row = m.find("albedo", "under", "none");
  ASSERT_TRUE(row);
  // Fine-tuned cells keep the best evaluation, which includes the start.
  for (GroupName g : opt.groups) {
    const auto* cell = m.find("albedo", "under", std::string(to_string(g)));
    ASSERT_TRUE(cell);
    EXPECT_GE(cell->metrics.psnr, row->metrics.psnr) << to_string(g);
  }
  EXPECT_EQ(m.cells.front().metrics, evaluate(base, scene.dataset, cfg.eval_render, cfg.seed, 1).metrics);
}

TEST(Matrix, WritesReportsAndGrid) {
  const auto dir = std::filesystem::temp_directory_path() / "mfield_test_matrix_out";
  std::filesystem::remove_all(dir);
  const auto cfg = tiny_config();
  const SceneModel<float> base(cfg.model, 0);
  MatrixOptions opt;
  opt.specs = {PerturbationSpec::scale(PerturbTarget::kF0, 1.2)};
  opt.groups = {GroupName::kF0};
  opt.iterations = 1;
  opt.out_dir = dir;
  const auto m = run_matrix(base, tiny_oracle().dataset, cfg, opt);
  // The CSV schema carries no pixel counts; compare its text instead.
  EXPECT_EQ(read_text(dir / "matrix.csv"), matrix_csv(m));
  EXPECT_EQ(matrix_csv(parse_matrix_csv(read_text(dir / "matrix.csv"))), matrix_csv(m));
  EXPECT_EQ(parse_matrix_json(nlohmann::json::parse(read_text(dir / "matrix.json"))), m);
  EXPECT_TRUE(std::filesystem::exists(dir / "grid.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "grid.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "cells" / "f0_over__f0.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "cells" / "baseline__none.png"));
  std::filesystem::remove_all(dir);
}

TEST(Matrix, RejectsDuplicateRowsAndBadOrders) {
  const auto cfg = tiny_config();
  const SceneModel<float> base(cfg.model, 0);
  MatrixOptions opt;
  opt.specs = {PerturbationSpec::scale(PerturbTarget::kF0, 1.2), PerturbationSpec::scale(PerturbTarget::kF0, 1.5)};
  EXPECT_THROW(run_matrix(base, tiny_oracle().dataset, cfg, opt), std::invalid_argument);
  opt.specs.pop_back();
  opt.groups = {GroupName::kF0, GroupName::kAlbedo};
  opt.order = {0, 0};
  EXPECT_THROW(run_matrix(base, tiny_oracle().dataset, cfg, opt), std::invalid_argument);
}

TEST(Matrix, SummariesWeighByScenesOrViews) {
  ExperimentMatrix a, b;
  a.cells.push_back({"a", "none", "n/a", "none", {10, 0.5, 4, 1, 0, 0}});
  b.cells.push_back({"b", "none", "n/a", "none", {20, 0.7, 8, 3, 0, 0}});
  const auto s = summarize_matrices({{a, 1}, {b, 3}});
  ASSERT_EQ(s.cells.size(), 2u);
  EXPECT_EQ(s.cells[0].scene, "mean_by_scene");
  EXPECT_DOUBLE_EQ(s.cells[0].metrics.psnr, 15.0);
  EXPECT_EQ(s.cells[1].scene, "mean_by_views");
  EXPECT_DOUBLE_EQ(s.cells[1].metrics.psnr, 17.5);
}

// ---------------------------------------------------------------- consistency

TEST(Consistency, IdenticalModelsHaveZeroSpread) {
  const auto cfg = tiny_config();
  const SceneModel<float> m(cfg.model, 4);
  std::vector<Camera> cams;
  for (const auto& f : tiny_oracle().dataset.train) cams.push_back(f.camera);
  const auto rep = consistency_from_models({m, m.deep_copy(), m}, cams, cfg.eval_render, 0);
  EXPECT_EQ(rep.models, 3u);
  for (const char* p : kConsistencyProperties) {
    ASSERT_EQ(rep.stddev.at(p).size(), cams.size() * 24u * 24u) << p;
    // Population variance from sums can round to a tiny negative; clamped at 0.
    for (double v : rep.stddev.at(p)) ASSERT_LT(v, 1e-6) << p;
  }
}

TEST(Consistency, DifferentModelsSpread) {
  const auto cfg = tiny_config();
  std::vector<Camera> cams{tiny_oracle().dataset.test.front().camera};
  const auto rep =
      consistency_from_models({SceneModel<float>(cfg.model, 1), SceneModel<float>(cfg.model, 2)}, cams, cfg.eval_render, 0);
  const auto& sd = rep.stddev.at("albedo");
  EXPECT_GT(*std::max_element(sd.begin(), sd.end()), 0.0);
}

TEST(Consistency, SameDataSameSeedIsZeroVariance) {
  const auto cfg = tiny_config();
  const auto rep = consistency_experiment({tiny_oracle().dataset, tiny_oracle().dataset}, cfg);
  for (const char* p : kConsistencyProperties) EXPECT_EQ(rep.mean_stddev.at(p), 0.0) << p;
}

TEST(Consistency, TwoIlluminationsEmitAlbedoMapOfViewShape) {
  OracleParams p;
  p.width = p.height = 24;
  p.train_views = 4;
  p.test_views = 1;
  p.env_height = 8;
  p.env_width = 16;
  const auto a = oracle_scene(p).dataset;
  p.sky.intensity = 0.5;
  const auto b = oracle_scene(p).dataset;
  const auto rep = consistency_experiment({a, b}, tiny_config());
  EXPECT_EQ(rep.stddev.at("albedo").size(), 24u * 24u);
  EXPECT_EQ(rep.views, 1u);
  const auto dir = std::filesystem::temp_directory_path() / "mfield_test_consistency";
  write_consistency(dir, rep);
  EXPECT_TRUE(std::filesystem::exists(dir / "albedo_std.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "consistency.json"));
  std::filesystem::remove_all(dir);
}

TEST(Consistency, PoseMismatchIsRejected) {
  auto a = tiny_oracle().dataset, b = a;
  b.train[1].camera.camera_to_world[3] += 0.5;
  EXPECT_THROW(check_same_poses({a, b}), PoseMismatch);
  EXPECT_THROW(check_same_poses({a}), std::invalid_argument);
  auto c = a;
  c.test.clear();
  EXPECT_THROW(check_same_poses({a, c}), PoseMismatch);
}
