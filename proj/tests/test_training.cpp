#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "swtr/ablation.hpp"
#include "swtr/grad_check.hpp"
#include "swtr/trainer.hpp"
#include "test_util.hpp"

using namespace swtr;
using swtr::testing::random_tensor;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig e = toy_experiment();
  SwtrConfig& c = e.model;
  c.input_height = c.input_width = 32;
  c.d_model = 12;
  c.heads = 3;
  c.num_transformer_layers = 2;
  c.encoder_channels = {4, 6, 8, 10};
  c.decoder_channels = {8, 6, 4, 4};
  c.window_size = 2;
  e.preprocess.height = e.preprocess.width = 32;
  e.train.epochs = 1;
  e.train.batch_size = 4;
  e.train.fold_count = 2;
  e.augment.copies = 2;
  e.augment.translation_vox = {2, 2, 0};
  return e;
}

// Synthetic cases on a 32x32 grid: bright liver disc with a dark lesion.
std::vector<Case> synthetic_cases(std::size_t n, std::size_t slices = 3) {
  std::vector<Case> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Dims d{32, 32, slices};
    VoxelMask m(d, {2, 2, 4});
    VolumeImage v(d, m.spacing, Modality::kMR);
    auto noise = random_tensor<float>({v.data.size()}, 50 + i, -0.1f, 0.1f);
    const double cx = 14 + static_cast<double>(i % 4), cy = 16 - static_cast<double>(i % 3);
    for (std::size_t z = 0; z < slices; ++z)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          std::uint8_t l = r2 < 81 ? label::kLiver : label::kBackground;
          if (r2 < 6) l = label::kLesion;
          m.at(x, y, z) = l;
          v.at(x, y, z) = (l == 1 ? 1.0f : l == 2 ? 0.4f : 0.0f) + noise.vec()[m.index(x, y, z)];
        }
    out.push_back({"S" + std::to_string(i), std::move(v), std::move(m)});
  }
  return out;
}

std::vector<std::uint8_t> stripe_labels(std::size_t n, std::size_t period) {
  std::vector<std::uint8_t> l(n);
  for (std::size_t i = 0; i < n; ++i) l[i] = static_cast<std::uint8_t>((i / period) % 3);
  return l;
}

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kContract;
}

}  // namespace

TEST(Losses, UniformLogitsCrossEntropyIsLnThree) {
  const auto labels = stripe_labels(2 * 5 * 5, 3);
  const auto ce = cross_entropy_loss(Tensor<double>::zeros({2, 3, 5, 5}), std::span<const std::uint8_t>(labels));
  EXPECT_NEAR(ce.item(), std::log(3.0), 1e-12);
}

TEST(Losses, DiceOfPerfectAndMissedPredictions) {
  const auto labels = stripe_labels(2 * 4 * 4, 5);
  const auto t = one_hot<double>(labels, 2, 3, 4, 4);
  EXPECT_LT(soft_dice_loss(t, t).item(), 1e-4);
  Tensor<double> miss = t.detach();
  for (auto& v : miss.vec()) v = 1.0 - v;
  // Renormalize so each pixel's class probabilities sum to one.
  for (auto& v : miss.vec()) v *= 0.5;
  EXPECT_NEAR(soft_dice_loss(miss, t).item(), 1.0, 1e-5);
}

TEST(Losses, ConfidentCorrectCrossEntropyNearZero) {
  const auto labels = stripe_labels(4 * 4, 2);
  auto logits = one_hot<double>(labels, 1, 3, 4, 4);
  for (auto& v : logits.vec()) v *= 40.0;
  EXPECT_LT(cross_entropy_loss(logits, std::span<const std::uint8_t>(labels)).item(), 1e-12);
}

TEST(Losses, CombinedEqualsSumExactly) {
  const auto logits = random_tensor<double>({2, 3, 6, 6}, 1, -2, 2);
  const auto labels = stripe_labels(2 * 36, 4);
  const std::span<const std::uint8_t> l(labels);
  const double combined = dice_ce_loss(logits, l).item();
  const double dice = soft_dice_loss(softmax(logits, 1), one_hot<double>(labels, 2, 3, 6, 6)).item();
  const double ce = cross_entropy_loss(logits, l).item();
  EXPECT_EQ(combined, dice + ce);
  EXPECT_EQ(segmentation_loss(LossKind::kDiceCe, logits, l).item(), combined);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  const auto labels = stripe_labels(2 * 25, 3);
  const std::span<const std::uint8_t> l(labels);
  for (const char* name : {"dice", "ce", "bce", "dice+ce"}) {
    const LossKind kind = parse_loss(name);
    auto logits = random_tensor<double>({2, 3, 5, 5}, 2, -1.5, 1.5);
    const auto r = grad_check<double>([&] { return segmentation_loss(kind, logits, l); }, {logits}, 1e-6);
    EXPECT_TRUE(r.ok(1e-4)) << name << " " << r.max_rel_error;
  }
  EXPECT_EQ(code_of([] { parse_loss("mse"); }), ErrorCode::kConfig);
}

TEST(Losses, ShapeMismatchIsDimensionError) {
  const auto a = Tensor<double>::zeros({1, 3, 4, 4}), b = Tensor<double>::zeros({1, 3, 4, 5});
  EXPECT_EQ(code_of([&] { soft_dice_loss(a, b); }), ErrorCode::kDimension);
}

namespace {

struct Bowl {
  ParameterStore<double> ps;
  Tensor<double> w;
  explicit Bowl(std::vector<double> init) {
    const std::size_t n = init.size();
    w = ps.add("w", Tensor<double>::from({n}, std::move(init)));
  }
  void grad_of_half_norm() {
    ps.zero_grad();
    backward(scale(sum(mul(w, w)), 0.5));
  }
};

}  // namespace

TEST(Optimizer, SgdWithoutMomentumUnitGradient) {
  ParameterStore<double> ps;
  auto w = ps.add("w", Tensor<double>::from({3}, {1.0, -2.0, 0.5}));
  backward(sum(w));
  OptimizerConfig cfg;
  cfg.momentum = 0.0;
  cfg.lr = 1e-4;
  Optimizer<double> opt(cfg);
  opt.step(ps);
  EXPECT_EQ(w.vec(), (std::vector<double>{1.0 - 1e-4, -2.0 - 1e-4, 0.5 - 1e-4}));
}

TEST(Optimizer, ZeroGradientsLeaveParametersUnchanged) {
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam, OptimizerKind::kRmsProp}) {
    ParameterStore<double> ps;
    auto w = ps.add("w", Tensor<double>::from({3}, {1.0, -2.0, 0.5}));
    w.zero_grad();
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.lr = 0.1;
    Optimizer<double> opt(cfg);
    for (int i = 0; i < 3; ++i) opt.step(ps);
    EXPECT_EQ(w.vec(), (std::vector<double>{1.0, -2.0, 0.5})) << optimizer_name(kind);
  }
}

TEST(Optimizer, FirstStepsMatchPublishedUpdateRules) {
  for (auto kind : {OptimizerKind::kAdam, OptimizerKind::kRmsProp}) {
    Bowl b({2.0, -0.5});
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.lr = 0.01;
    Optimizer<double> opt(cfg);
    b.grad_of_half_norm();
    opt.step(b.ps);
    // Adam: m_hat = g, v_hat = g^2. RMSProp: s = (1 - alpha) g^2.
    const double g[2] = {2.0, -0.5};
    for (int i = 0; i < 2; ++i) {
      const double step = kind == OptimizerKind::kAdam ? g[i] / (std::abs(g[i]) + cfg.eps)
                                                       : g[i] / (std::sqrt((1 - cfg.alpha) * g[i] * g[i]) + cfg.eps);
      EXPECT_NEAR(b.w.vec()[i], g[i] - cfg.lr * step, 1e-14) << optimizer_name(kind);
    }
  }
}

TEST(Optimizer, SgdMomentumMatchesRecurrence) {
  Bowl b({1.0});
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  Optimizer<double> opt(cfg);
  double w = 1.0, v = 0.0;
  for (int i = 0; i < 5; ++i) {
    b.grad_of_half_norm();
    opt.step(b.ps);
    v = 0.9 * v + w;
    w -= 0.1 * v;
    EXPECT_NEAR(b.w.vec()[0], w, 1e-15);
  }
}

TEST(Optimizer, QuadraticBowlConverges) {
  for (double momentum : {0.0, 0.9}) {
    Bowl b({3.0, -4.0, 1.5, 0.25});
    OptimizerConfig cfg;
    cfg.lr = 1e-2;
    cfg.momentum = momentum;
    Optimizer<double> opt(cfg);
    for (int i = 0; i < 10000; ++i) {
      b.grad_of_half_norm();
      opt.step(b.ps);
    }
    double n2 = 0;
    for (double x : b.w.vec()) n2 += x * x;
    EXPECT_LT(std::sqrt(n2), 1e-3) << momentum;
  }
}

TEST(Optimizer, MissingGradientIsContractError) {
  ParameterStore<double> ps;
  ps.add("w", Tensor<double>::from({1}, {1.0}));
  Optimizer<double> opt(OptimizerConfig{});
  EXPECT_EQ(code_of([&] { opt.step(ps); }), ErrorCode::kContract);
}

TEST(Optimizer, ZeroLearningRateLeavesModelBitIdentical) {
  const ExperimentConfig e = tiny_experiment();
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam, OptimizerKind::kRmsProp}) {
    SwtrModel<float> m(e.model);
    const auto before = parameter_checksum(m.parameters());
    const auto labels = stripe_labels(2 * 32 * 32, 7);
    backward(dice_ce_loss(m.forward(random_tensor<float>({2, 1, 32, 32}, 3)), std::span<const std::uint8_t>(labels)));
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.lr = 0.0;
    Optimizer<float> opt(cfg);
    opt.step(m.parameters());
    EXPECT_EQ(parameter_checksum(m.parameters()), before) << optimizer_name(kind);
  }
}

TEST(Optimizer, SmallSgdStepLowersLossOnFixedBatch) {
  ExperimentConfig e = tiny_experiment();
  const auto cases = synthetic_cases(1, 4);
  const auto& img = cases[0].image;
  const auto x = Tensor<float>::from({4, 1, 32, 32}, img.data);
  const std::span<const std::uint8_t> labels(cases[0].mask.data);
  int decreased = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    e.model.seed = seed;
    SwtrModel<float> m(e.model);
    auto loss = dice_ce_loss(m.forward(x), labels);
    const float before = loss.item();
    backward(loss);
    OptimizerConfig cfg;
    cfg.lr = 1e-5;
    Optimizer<float> opt(cfg);
    opt.step(m.parameters());
    decreased += dice_ce_loss(m.forward(x), labels).item() < before;
  }
  EXPECT_GE(decreased, 18);
}

TEST(Folds, FortyEightPatientsSevenFolds) {
  std::vector<std::string> ids;
  for (int i = 0; i < 48; ++i) ids.push_back("p" + std::to_string(i));
  const auto plan = make_folds(ids, 7, 1);
  std::vector<std::size_t> sizes;
  for (const auto& f : plan.folds) sizes.push_back(f.validation.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{7, 7, 7, 7, 7, 7, 6}));
  EXPECT_NO_THROW(validate_plan(plan, ids));
}

TEST(Folds, InvariantsHoldForManySeedsAndSizes) {
  for (std::size_t n : {7u, 20u, 48u, 131u})
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      std::vector<std::string> ids;
      for (std::size_t i = 0; i < n; ++i) ids.push_back("c" + std::to_string(i));
      const auto plan = make_folds(ids, 7, seed);
      ASSERT_NO_THROW(validate_plan(plan, ids));
      std::size_t lo = n, hi = 0;
      for (const auto& f : plan.folds) {
        lo = std::min(lo, f.validation.size());
        hi = std::max(hi, f.validation.size());
      }
      EXPECT_LE(hi - lo, 1u);
      EXPECT_EQ(make_folds(ids, 7, seed).folds[3].validation, plan.folds[3].validation);
    }
}

TEST(Folds, TooManyFoldsIsConfigError) {
  EXPECT_EQ(code_of([] { make_folds({"a", "b", "c"}, 7, 1); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { make_folds({"a", "a", "c"}, 2, 1); }), ErrorCode::kConfig);
}

TEST(Folds, LeakageAuditOverAugmentedTrainingSlices) {
  const auto cases = synthetic_cases(6, 2);
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.id);
  const auto plan = make_folds(ids, 3, 4);
  AugmentSpec spec;
  spec.copies = 2;
  for (const auto& f : plan.folds) {
    const auto train = select_cases(cases, f.train);
    const auto ds = augment_dataset(train, spec);
    EXPECT_NO_THROW(audit_no_leakage(ds, f));
    std::set<std::string> sources;
    for (const auto& s : ds.slice_index()) sources.insert(ds.source(s.patient).id);
    for (const auto& v : f.validation) EXPECT_FALSE(sources.contains(v));
  }
  // A dataset that contains a validation case fails the audit.
  const auto ds_all = augment_dataset(cases, spec);
  EXPECT_EQ(code_of([&] { audit_no_leakage(ds_all, plan.folds[0]); }), ErrorCode::kContract);
}

TEST(Trainer, OneEpochOnTwoVolumesWritesLoadableCheckpoint) {
  const ExperimentConfig e = tiny_experiment();
  FoldTrainer t(e, synthetic_cases(2));
  EXPECT_EQ(t.batches_per_epoch(), (2 * 2 * 3 + 3) / 4);
  const double loss = t.run_epoch();
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_EQ(t.cursor().epoch, 1u);
  const std::string dir = swtr::testing::temp_dir("trainer_smoke");
  t.save_checkpoint(dir + "/ckpt.swtr");
  const auto back = load_weights<float>(dir + "/ckpt.swtr");
  EXPECT_EQ(parameter_checksum(back.parameters()), parameter_checksum(t.model().parameters()));
}

TEST(Trainer, ResumedCheckpointReproducesNextStepBitIdentically) {
  for (const char* optimizer : {"sgd", "adam"}) {
    ExperimentConfig e = tiny_experiment();
    e.train.optimizer = optimizer;
    e.train.lr = 1e-3;
    e.train.lr_schedule = "cosine";
    e.train.epochs = 3;
    const auto cases = synthetic_cases(2);
    const std::string path = swtr::testing::temp_dir("trainer_resume") + "/mid.swtr";
    FoldTrainer a(e, cases);
    for (int i = 0; i < 4; ++i) a.step();
    a.save_checkpoint(path);
    const double next_a = a.step();
    const double after_a = a.step();

    FoldTrainer b(e, cases);
    b.load_checkpoint(path);
    EXPECT_EQ(b.cursor().epoch, 1u);
    EXPECT_EQ(b.cursor().batch, 1u);
    EXPECT_EQ(b.step(), next_a) << optimizer;
    EXPECT_EQ(b.step(), after_a) << optimizer;
    EXPECT_EQ(parameter_checksum(b.model().parameters()), parameter_checksum(a.model().parameters())) << optimizer;
  }
}

TEST(Trainer, CheckpointFromDifferentModelRejected) {
  ExperimentConfig e = tiny_experiment();
  const auto cases = synthetic_cases(2);
  const std::string path = swtr::testing::temp_dir("trainer_mismatch") + "/a.swtr";
  FoldTrainer(e, cases).save_checkpoint(path);
  e.model.num_skip_connections = 1;
  FoldTrainer b(e, cases);
  EXPECT_EQ(code_of([&] { b.load_checkpoint(path); }), ErrorCode::kConfig);
}

TEST(Trainer, CosineWithUnitFloorEqualsConstant) {
  ExperimentConfig e = tiny_experiment();
  const auto cases = synthetic_cases(2);
  FoldTrainer a(e, cases);
  e.train.lr_schedule = "cosine";
  e.train.lr_min_factor = 1.0;
  FoldTrainer b(e, cases);
  a.run_epoch();
  b.run_epoch();
  EXPECT_EQ(parameter_checksum(a.model().parameters()), parameter_checksum(b.model().parameters()));
}

TEST(Trainer, NonFiniteLossAbortsWithContext) {
  ExperimentConfig e = tiny_experiment();
  e.train.lr = 1e30;
  e.train.epochs = 3;
  FoldTrainer t(e, synthetic_cases(2));
  try {
    for (int i = 0; i < 3; ++i) t.run_epoch();
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::kNumerical);
    EXPECT_NE(std::string(err.what()).find(" batch "), std::string::npos);
  }
}

TEST(Trainer, WrongSliceSizeRejected) {
  auto cases = synthetic_cases(1);
  ExperimentConfig e = tiny_experiment();
  e.model.input_height = e.model.input_width = 64;
  e.preprocess.height = e.preprocess.width = 64;
  EXPECT_EQ(code_of([&] { FoldTrainer t(e, cases); }), ErrorCode::kDimension);
}

TEST(CrossValidation, RunsEveryFoldAndValidatesEachPatientOnce) {
  ExperimentConfig e = tiny_experiment();
  e.train.fold_count = 3;
  const auto cases = synthetic_cases(5, 2);
  std::vector<std::string> lines;
  CvOptions opt;
  opt.log = [&](const std::string& l) { lines.push_back(l); };
  const auto res = cross_validate(e, cases, opt);
  ASSERT_EQ(res.folds.size(), 3u);
  EXPECT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0].rfind("fold=0 epoch=1 loss=", 0), 0u);
  std::multiset<std::string> validated;
  for (const auto& r : res.reports()) validated.insert(r.patient);
  EXPECT_EQ(validated.size(), 5u);
  EXPECT_EQ(std::set<std::string>(validated.begin(), validated.end()).size(), 5u);
  for (const auto& r : res.reports()) {
    EXPECT_GE(r.report.dsc_liver, 0.0);
    EXPECT_LE(r.report.dsc_liver, 1.0);
  }
}

TEST(CrossValidation, IdenticalSeedsGiveIdenticalResults) {
  ExperimentConfig e = tiny_experiment();
  const auto cases = synthetic_cases(4, 2);
  const std::string d1 = swtr::testing::temp_dir("cv_det1"), d2 = swtr::testing::temp_dir("cv_det2");
  CvOptions o1, o2;
  o1.out_dir = d1;
  o2.out_dir = d2;
  const auto a = cross_validate(e, cases, o1), b = cross_validate(e, cases, o2);
  EXPECT_EQ(report_table_tsv(a.reports()), report_table_tsv(b.reports()));
  EXPECT_EQ(detail::read_file(d1 + "/fold0.swtr"), detail::read_file(d2 + "/fold0.swtr"));
  EXPECT_EQ(detail::read_file(d1 + "/fold1.swtr"), detail::read_file(d2 + "/fold1.swtr"));
}

TEST(Ablation, SkipsAxisEmitsFourRowsAndLayersAxisThree) {
  ExperimentConfig e = tiny_experiment();
  const auto cases = synthetic_cases(4, 2);
  AblationOptions opt;
  opt.seeds = {1};
  opt.validation_cases = 1;
  const auto skips = ablation_run(AblationAxis::kSkips, e, cases, opt);
  ASSERT_EQ(skips.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(skips.rows[i].arm, i);
  const std::string text = ablation_table_text(skips);
  EXPECT_EQ(text.rfind("skips\tDSC_liver\tDSC_lesion\n0\t", 0), 0u);
  e.model.d_model = 6;
  e.model.heads = 1;
  const auto layers = ablation_run(AblationAxis::kLayers, e, cases, opt);
  ASSERT_EQ(layers.rows.size(), 3u);
  EXPECT_EQ(layers.rows[0].arm, 8u);
  EXPECT_EQ(layers.rows[2].arm, 12u);
}

TEST(Ablation, TrainCasesArmBeyondPoolIsConfigError) {
  const auto cases = synthetic_cases(4, 1);
  AblationOptions opt;
  opt.seeds = {1};
  opt.validation_cases = 1;
  EXPECT_EQ(code_of([&] { ablation_run(AblationAxis::kTrainCases, {2, 4}, tiny_experiment(), cases, opt); }),
            ErrorCode::kConfig);
}

TEST(Ablation, SplitIsSeededAndDisjoint) {
  const auto cases = synthetic_cases(10, 1);
  const auto a = make_ablation_split(cases, 3, 5), b = make_ablation_split(cases, 3, 5);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.pool, b.pool);
  std::set<std::string> all(a.pool.begin(), a.pool.end());
  for (const auto& v : a.validation) EXPECT_TRUE(all.insert(v).second);
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(parse_axis("train_cases"), AblationAxis::kTrainCases);
  EXPECT_EQ(code_of([] { parse_axis("depth"); }), ErrorCode::kConfig);
}
