#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "swtr/augment.hpp"
#include "swtr/folds.hpp"
#include "swtr/losses.hpp"
#include "swtr/metrics.hpp"
#include "swtr/model.hpp"
#include "swtr/optim.hpp"
#include "swtr/preprocess.hpp"
#include "swtr/weights_io.hpp"

namespace swtr {

struct TrainConfig {
  std::string loss = "dice+ce";
  std::string optimizer = "sgd";
  double lr = 1e-4;
  double momentum = 0.9;
  std::string lr_schedule = "constant";  // constant | cosine
  double lr_min_factor = 0.05;           // cosine floor as a fraction of lr
  std::size_t epochs = 70;
  std::size_t batch_size = 32;
  std::size_t fold_count = 7;
  std::size_t validate_every = 1;  // epochs; 0 = only after the last epoch
  std::uint64_t seed = 1;

  template <typename V>
  void visit(V& v) {
    v("loss", loss);
    v("optimizer", optimizer);
    v("lr", lr);
    v("momentum", momentum);
    v("lr_schedule", lr_schedule);
    v("lr_min_factor", lr_min_factor);
    v("epochs", epochs);
    v("batch_size", batch_size);
    v("fold_count", fold_count);
    v("validate_every", validate_every);
    v("seed", seed);
  }

  void validate() const {
    parse_loss(loss);
    parse_optimizer(optimizer);
    if (!(lr > 0.0) || !std::isfinite(lr)) fail(ErrorCode::kConfig, "train.lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorCode::kConfig, "train.momentum must lie in [0,1)");
    if (lr_schedule != "constant" && lr_schedule != "cosine")
      fail(ErrorCode::kConfig, "train.lr_schedule must be constant or cosine, got '" + lr_schedule + "'");
    if (!(lr_min_factor >= 0.0 && lr_min_factor <= 1.0)) fail(ErrorCode::kConfig, "train.lr_min_factor must lie in [0,1]");
    if (epochs < 1) fail(ErrorCode::kConfig, "train.epochs must be at least 1");
    if (batch_size < 1) fail(ErrorCode::kConfig, "train.batch_size must be at least 1");
    if (fold_count < 2) fail(ErrorCode::kConfig, "train.fold_count must be at least 2");
  }

  OptimizerConfig optimizer_config() const {
    OptimizerConfig o;
    o.kind = parse_optimizer(optimizer);
    o.lr = lr;
    o.momentum = momentum;
    return o;
  }
};

// Everything a training run depends on, as one key=value document.
struct ExperimentConfig {
  SwtrConfig model;
  TrainConfig train;
  AugmentSpec augment;
  PreprocessConfig preprocess;

  void validate() const {
    model.validate();
    train.validate();
    augment.validate();
    if (preprocess.height != model.input_height || preprocess.width != model.input_width)
      fail(ErrorCode::kConfig, "preprocess.height/width must equal model.input_height/input_width");
  }

  void write(KeyValueConfig& kv) const {
    write_config(model, kv, "model.");
    write_config(train, kv, "train.");
    write_config(augment, kv, "augment.");
    write_config(preprocess, kv, "preprocess.");
  }

  void read(const KeyValueConfig& kv, std::set<std::string>& consumed) {
    read_config(model, kv, "model.", &consumed);
    read_config(train, kv, "train.", &consumed);
    read_config(augment, kv, "augment.", &consumed);
    read_config(preprocess, kv, "preprocess.", &consumed);
  }

  // One seed for model init, batch order and augmentation.
  void set_seed(std::uint64_t s) {
    model.seed = s;
    train.seed = s;
    augment.seed = s;
  }
};

// Slice-level training settings used for the phantom experiments.
inline ExperimentConfig toy_experiment() {
  ExperimentConfig e;
  e.model = toy_config();
  e.preprocess.height = e.model.input_height;
  e.preprocess.width = e.model.input_width;
  return e;
}

// Training settings for the toy model on 64x64 phantoms: Adam with a cosine
// decay converges within the desk-scale epoch budget.
inline ExperimentConfig phantom_experiment() {
  ExperimentConfig e = toy_experiment();
  e.train.optimizer = "adam";
  e.train.lr = 1e-3;
  e.train.lr_schedule = "cosine";
  e.train.epochs = 15;
  e.train.batch_size = 8;
  e.train.validate_every = 0;
  e.augment.copies = 2;
  e.augment.translation_vox = {6, 6, 2};
  return e;
}

inline std::vector<Case> preprocess_cases(const std::vector<Case>& cases, const PreprocessConfig& cfg) {
  std::vector<Case> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back({c.id, preprocess_image(c.image, cfg), preprocess_mask(c.mask, cfg)});
  return out;
}

struct EpochLog {
  std::size_t fold = 0;
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  std::optional<double> val_dice_liver, val_dice_lesion;
};

inline std::string format_epoch_log(const EpochLog& e) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt_num(*v) : std::string("nan"); };
  return "fold=" + std::to_string(e.fold) + " epoch=" + std::to_string(e.epoch) + " loss=" + fmt_num(e.loss, 6) +
         " val_dice_liver=" + opt(e.val_dice_liver) + " val_dice_lesion=" + opt(e.val_dice_lesion);
}

struct TrainCursor {
  std::size_t epoch = 0;  // completed epochs
  std::size_t batch = 0;  // next batch within the epoch
};

// Trains one model on the augmented slices of a set of cases. Batch order is
// a seeded permutation per (fold, epoch), so the run is reproducible and can
// be resumed from any checkpoint.
class FoldTrainer {
 public:
  FoldTrainer(const ExperimentConfig& cfg, std::vector<Case> train_cases, std::size_t fold = 0)
      : cfg_(cfg),
        cases_(std::move(train_cases)),
        fold_(fold),
        model_(cfg.model),
        opt_(cfg.train.optimizer_config()),
        loss_kind_(parse_loss(cfg.train.loss)) {
    cfg_.validate();
    dataset_ = std::make_unique<AugmentedDataset>(&cases_, cfg_.augment);
    for (const auto& c : cases_)
      if (c.image.dims.nx != cfg_.model.input_width || c.image.dims.ny != cfg_.model.input_height)
        fail(ErrorCode::kDimension, "case '" + c.id + "' slices do not match the model input size");
    const std::size_t copies = cfg_.augment.copies;
    samples_.reserve(cases_.size() * copies);
    for (std::size_t p = 0; p < cases_.size(); ++p)
      for (std::size_t c = 0; c < copies; ++c) samples_.push_back(dataset_->sample(p, c));
    model_.parameters().zero_grad();
  }

  const SwtrModel<float>& model() const { return model_; }
  SwtrModel<float>& model() { return model_; }
  const AugmentedDataset& dataset() const { return *dataset_; }
  const TrainCursor& cursor() const { return cursor_; }
  std::size_t fold() const { return fold_; }

  std::size_t batches_per_epoch() const {
    const std::size_t n = dataset_->slice_index().size(), bs = cfg_.train.batch_size;
    return (n + bs - 1) / bs;
  }

  // One optimizer step on the next batch; returns its loss.
  double step() {
    const auto& index = dataset_->slice_index();
    const std::vector<std::size_t>& perm = permutation(cursor_.epoch);
    const std::size_t bs = cfg_.train.batch_size, h = cfg_.model.input_height, w = cfg_.model.input_width, hw = h * w;
    const std::size_t begin = cursor_.batch * bs, end = std::min(index.size(), begin + bs), nb = end - begin;
    std::vector<float> x(nb * hw);
    std::vector<std::uint8_t> labels(nb * hw);
    for (std::size_t i = 0; i < nb; ++i) {
      const SliceRef& s = index[perm[begin + i]];
      const auto& [img, msk] = samples_[s.patient * cfg_.augment.copies + s.copy];
      std::copy_n(img.data.begin() + static_cast<std::ptrdiff_t>(s.slice * hw), hw, x.begin() + static_cast<std::ptrdiff_t>(i * hw));
      std::copy_n(msk.data.begin() + static_cast<std::ptrdiff_t>(s.slice * hw), hw, labels.begin() + static_cast<std::ptrdiff_t>(i * hw));
    }
    Tensor<float> logits = model_.forward(Tensor<float>::from({nb, 1, h, w}, std::move(x)));
    Tensor<float> loss = segmentation_loss(loss_kind_, logits, std::span<const std::uint8_t>(labels));
    const double value = loss.item();
    if (!std::isfinite(value))
      fail(ErrorCode::kNumerical, "non-finite loss at fold " + std::to_string(fold_) + " epoch " +
                                      std::to_string(cursor_.epoch + 1) + " batch " + std::to_string(cursor_.batch));
    backward(loss);
    opt_.set_lr(scheduled_lr());
    opt_.step(model_.parameters());
    model_.parameters().zero_grad();
    if (++cursor_.batch == batches_per_epoch()) {
      cursor_.batch = 0;
      ++cursor_.epoch;
    }
    return value;
  }

  // Runs to the end of the current epoch; mean batch loss.
  double run_epoch() {
    const std::size_t e = cursor_.epoch;
    double sum = 0.0;
    std::size_t n = 0;
    while (cursor_.epoch == e) {
      sum += step();
      ++n;
    }
    return sum / static_cast<double>(n);
  }

  void save_checkpoint(const std::string& path) const {
    auto extra = opt_.export_state(model_.parameters());
    extra.push_back({"optim.cursor", {2}, {static_cast<float>(cursor_.epoch), static_cast<float>(cursor_.batch)}});
    save_weights(model_, path, std::move(extra));
  }

  void load_checkpoint(const std::string& path) {
    const WeightFile wf = read_weight_file(path);
    if (config_text(config_from_text(wf.config)) != config_text(cfg_.model))
      fail(ErrorCode::kConfig, path + ": checkpoint model config differs from the run config");
    assign_weights(model_, wf);
    opt_.import_state(model_.parameters(), wf);
    if (const TensorRecord* c = wf.find("optim.cursor")) {
      cursor_.epoch = static_cast<std::size_t>(c->values[0]);
      cursor_.batch = static_cast<std::size_t>(c->values[1]);
    }
  }

 private:
  // Depends only on the cursor, so a resumed run follows the same schedule.
  double scheduled_lr() const {
    const TrainConfig& t = cfg_.train;
    if (t.lr_schedule == "constant") return t.lr;
    const double total = static_cast<double>(t.epochs * batches_per_epoch());
    const double done = static_cast<double>(cursor_.epoch * batches_per_epoch() + cursor_.batch);
    const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, done / total)));
    return t.lr * (t.lr_min_factor + (1.0 - t.lr_min_factor) * c);
  }

  const std::vector<std::size_t>& permutation(std::size_t epoch) {
    if (perm_epoch_ != epoch || perm_.empty()) {
      perm_.resize(dataset_->slice_index().size());
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      Rng rng(derive_seed(cfg_.train.seed, 0x62617463ULL + fold_, epoch));
      std::shuffle(perm_.begin(), perm_.end(), rng);
      perm_epoch_ = epoch;
    }
    return perm_;
  }

  ExperimentConfig cfg_;
  std::vector<Case> cases_;
  std::size_t fold_;
  SwtrModel<float> model_;
  Optimizer<float> opt_;
  LossKind loss_kind_;
  std::unique_ptr<AugmentedDataset> dataset_;
  std::vector<std::pair<VolumeImage, VoxelMask>> samples_;
  TrainCursor cursor_;
  std::vector<std::size_t> perm_;
  std::size_t perm_epoch_ = 0;
};

struct CaseResult {
  std::string id;
  MetricReport report;
  VoxelMask prediction;
};

inline std::vector<CaseResult> evaluate_cases(const SwtrModel<float>& model, const std::vector<Case>& cases) {
  std::vector<CaseResult> out;
  for (const auto& c : cases) {
    VoxelMask pred = predict_mask(model, c.image);
    out.push_back({c.id, patient_report(pred, c.mask), std::move(pred)});
  }
  return out;
}

inline std::vector<NamedReport> named_reports(const std::vector<CaseResult>& r) {
  std::vector<NamedReport> out;
  for (const auto& c : r) out.push_back({c.id, c.report});
  return out;
}

struct FoldResult {
  std::size_t fold = 0;
  std::vector<EpochLog> log;
  std::vector<CaseResult> validation;
};

struct CvOptions {
  std::string out_dir;                  // checkpoints fold<k>.swtr when set
  std::vector<std::size_t> folds;       // empty = all
  std::function<void(const std::string&)> log;  // receives each epoch line
};

inline std::vector<Case> select_cases(const std::vector<Case>& cases, const std::vector<std::string>& ids) {
  std::vector<Case> out;
  for (const auto& id : ids) {
    auto it = std::find_if(cases.begin(), cases.end(), [&](const Case& c) { return c.id == id; });
    if (it == cases.end()) fail(ErrorCode::kContract, "unknown case id '" + id + "'");
    out.push_back(*it);
  }
  return out;
}

// Trains on `train` and reports patient-wise metrics on `validation` (original, unaugmented volumes).
inline FoldResult train_and_validate(const ExperimentConfig& cfg, const std::vector<Case>& train,
                                     const std::vector<Case>& validation, std::size_t fold = 0,
                                     const CvOptions& opt = {}) {
  FoldTrainer trainer(cfg, train, fold);
  FoldResult res;
  res.fold = fold;
  for (std::size_t e = 1; e <= cfg.train.epochs; ++e) {
    EpochLog log;
    log.fold = fold;
    log.epoch = e;
    log.loss = trainer.run_epoch();
    const bool last = e == cfg.train.epochs;
    if (last || (cfg.train.validate_every > 0 && e % cfg.train.validate_every == 0)) {
      auto r = evaluate_cases(trainer.model(), validation);
      const auto s = summarize(named_reports(r));
      log.val_dice_liver = s.dsc_liver.mean;
      log.val_dice_lesion = s.dsc_lesion.mean;
      if (last) res.validation = std::move(r);
    }
    if (opt.log) opt.log(format_epoch_log(log));
    res.log.push_back(log);
  }
  if (!opt.out_dir.empty()) trainer.save_checkpoint(opt.out_dir + "/fold" + std::to_string(fold) + ".swtr");
  return res;
}

struct CvResult {
  FoldPlan plan;
  std::vector<FoldResult> folds;

  std::vector<NamedReport> reports() const {
    std::vector<NamedReport> out;
    for (const auto& f : folds)
      for (const auto& c : f.validation) out.push_back({c.id, c.report});
    return out;
  }
};

// k-fold cross-validation over preprocessed cases.
inline CvResult cross_validate(const ExperimentConfig& cfg, const std::vector<Case>& cases, const CvOptions& opt = {}) {
  cfg.validate();
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.id);
  CvResult res;
  res.plan = make_folds(ids, cfg.train.fold_count, cfg.train.seed);
  validate_plan(res.plan, ids);
  for (std::size_t f = 0; f < res.plan.folds.size(); ++f) {
    if (!opt.folds.empty() && std::find(opt.folds.begin(), opt.folds.end(), f) == opt.folds.end()) continue;
    const Fold& fold = res.plan.folds[f];
    res.folds.push_back(train_and_validate(cfg, select_cases(cases, fold.train), select_cases(cases, fold.validation), f, opt));
  }
  return res;
}

}  // namespace swtr
