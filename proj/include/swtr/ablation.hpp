#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "swtr/trainer.hpp"

namespace swtr {

enum class AblationAxis { kSkips, kLayers, kTrainCases };

inline AblationAxis parse_axis(const std::string& s) {
  if (s == "skips") return AblationAxis::kSkips;
  if (s == "layers") return AblationAxis::kLayers;
  if (s == "train_cases") return AblationAxis::kTrainCases;
  fail(ErrorCode::kConfig, "unknown ablation axis '" + s + "' (expected skips, layers or train_cases)");
}

inline std::string axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::kSkips: return "skips";
    case AblationAxis::kLayers: return "layers";
    case AblationAxis::kTrainCases: return "train_cases";
  }
  return "?";
}

inline std::vector<std::size_t> default_arms(AblationAxis a) {
  switch (a) {
    case AblationAxis::kSkips: return {0, 1, 2, 3};
    case AblationAxis::kLayers: return {8, 10, 12};
    case AblationAxis::kTrainCases: return {25, 30, 35, 40};
  }
  return {};
}

struct AblationOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::size_t validation_cases = 8;  // held out once, shared by every arm
  std::uint64_t split_seed = 1;
  std::size_t pool_limit = 0;  // cap on training cases for the skips/layers axes; 0 = whole pool
  std::function<void(const std::string&)> log;

  template <typename V>
  void visit(V& v) {
    v("seeds", seeds);
    v("validation_cases", validation_cases);
    v("split_seed", split_seed);
    v("pool_limit", pool_limit);
  }

  void validate() const {
    if (seeds.empty()) fail(ErrorCode::kConfig, "ablation.seeds must list at least one seed");
    if (validation_cases < 1) fail(ErrorCode::kConfig, "ablation.validation_cases must be at least 1");
  }
};

struct ArmSeedResult {
  std::uint64_t seed = 0;
  MeanStd dice_liver, dice_lesion;  // over validation patients
};

struct AblationRow {
  std::size_t arm = 0;
  std::vector<ArmSeedResult> seeds;
  MeanStd dice_liver, dice_lesion;  // over all validation patients of all seeds

  double median_liver() const { return median_of([](const ArmSeedResult& r) { return r.dice_liver.mean; }); }
  double median_lesion() const { return median_of([](const ArmSeedResult& r) { return r.dice_lesion.mean; }); }

 private:
  template <typename F>
  double median_of(F f) const {
    std::vector<double> v;
    for (const auto& s : seeds) v.push_back(f(s));
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
};

struct AblationTable {
  AblationAxis axis = AblationAxis::kSkips;
  std::vector<AblationRow> rows;

  const AblationRow* row(std::size_t arm) const {
    for (const auto& r : rows)
      if (r.arm == arm) return &r;
    return nullptr;
  }
};

// Fixed held-out split: a seeded choice of validation cases, the rest form the
// ordered training pool (the train_cases axis takes its first N entries).
struct AblationSplit {
  std::vector<std::string> pool;
  std::vector<std::string> validation;
};

inline AblationSplit make_ablation_split(const std::vector<Case>& cases, std::size_t n_val, std::uint64_t seed) {
  require(n_val >= 1 && n_val < cases.size(), ErrorCode::kConfig, "ablation needs 1..n-1 validation cases");
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.id);
  Rng rng(derive_seed(seed, 0x61626c74ULL));
  std::shuffle(ids.begin(), ids.end(), rng);
  AblationSplit s;
  s.validation.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.pool.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val), ids.end());
  return s;
}

inline ExperimentConfig apply_arm(ExperimentConfig cfg, AblationAxis axis, std::size_t arm) {
  if (axis == AblationAxis::kSkips) cfg.model.num_skip_connections = arm;
  if (axis == AblationAxis::kLayers) cfg.model.num_transformer_layers = arm;
  return cfg;
}

// One row per arm; each arm is trained once per seed on the same split.
inline AblationTable ablation_run(AblationAxis axis, const std::vector<std::size_t>& arms, const ExperimentConfig& base,
                                  const std::vector<Case>& cases, const AblationOptions& opt = {}) {
  const AblationSplit split = make_ablation_split(cases, opt.validation_cases, opt.split_seed);
  const std::vector<Case> validation = select_cases(cases, split.validation);
  AblationTable table;
  table.axis = axis;
  for (std::size_t arm : arms) {
    std::vector<std::string> train_ids = split.pool;
    if (axis == AblationAxis::kTrainCases) {
      if (arm > split.pool.size())
        fail(ErrorCode::kConfig, "train_cases arm " + std::to_string(arm) + " exceeds the " +
                                     std::to_string(split.pool.size()) + " available training cases");
      train_ids.resize(arm);
    } else if (opt.pool_limit > 0 && opt.pool_limit < train_ids.size()) {
      train_ids.resize(opt.pool_limit);
    }
    const std::vector<Case> train = select_cases(cases, train_ids);
    AblationRow row;
    row.arm = arm;
    std::vector<double> all_liver, all_lesion;
    for (std::uint64_t seed : opt.seeds) {
      ExperimentConfig cfg = apply_arm(base, axis, arm);
      cfg.set_seed(seed);
      CvOptions cv;
      if (opt.log)
        cv.log = [&](const std::string& line) { opt.log(axis_name(axis) + "=" + std::to_string(arm) + " seed=" + std::to_string(seed) + " " + line); };
      const FoldResult fr = train_and_validate(cfg, train, validation, 0, cv);
      std::vector<double> liver, lesion;
      for (const auto& c : fr.validation) {
        liver.push_back(c.report.dsc_liver);
        lesion.push_back(c.report.dsc_lesion);
      }
      all_liver.insert(all_liver.end(), liver.begin(), liver.end());
      all_lesion.insert(all_lesion.end(), lesion.begin(), lesion.end());
      row.seeds.push_back({seed, mean_std(liver), mean_std(lesion)});
    }
    row.dice_liver = mean_std(all_liver);
    row.dice_lesion = mean_std(all_lesion);
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline AblationTable ablation_run(AblationAxis axis, const ExperimentConfig& base, const std::vector<Case>& cases,
                                  const AblationOptions& opt = {}) {
  return ablation_run(axis, default_arms(axis), base, cases, opt);
}

// Tab-separated, one row per arm: arm, liver and lesion Dice as mean ± std.
inline std::string ablation_table_text(const AblationTable& t) {
  std::string out = axis_name(t.axis) + "\tDSC_liver\tDSC_lesion\n";
  for (const auto& r : t.rows)
    out += std::to_string(r.arm) + "\t" + fmt_mean_std(r.dice_liver) + "\t" + fmt_mean_std(r.dice_lesion) + "\n";
  return out;
}

}  // namespace swtr
