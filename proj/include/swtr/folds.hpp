#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "swtr/augment.hpp"
#include "swtr/nn.hpp"

namespace swtr {

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> validation;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

// Seeded shuffle, then k contiguous validation groups whose sizes differ by at
// most one (the larger groups first).
inline FoldPlan make_folds(const std::vector<std::string>& ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) fail(ErrorCode::kConfig, "fold count must be at least 2, got " + std::to_string(k));
  if (k > ids.size())
    fail(ErrorCode::kConfig, "fold count " + std::to_string(k) + " exceeds patient count " + std::to_string(ids.size()));
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size())
    fail(ErrorCode::kConfig, "patient ids are not unique");
  std::vector<std::string> order = ids;
  Rng rng(derive_seed(seed, 0x666f6c64ULL));
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan plan;
  const std::size_t base = ids.size() / k, extra = ids.size() % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t n = base + (f < extra ? 1 : 0);
    Fold fold;
    fold.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(pos + n));
    for (std::size_t i = 0; i < order.size(); ++i)
      if (i < pos || i >= pos + n) fold.train.push_back(order[i]);
    pos += n;
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

// Disjoint validation sets covering all ids, and train = complement per fold.
inline void validate_plan(const FoldPlan& plan, const std::vector<std::string>& ids) {
  std::set<std::string> all(ids.begin(), ids.end()), seen;
  for (const auto& f : plan.folds) {
    for (const auto& v : f.validation) {
      if (!all.contains(v)) fail(ErrorCode::kContract, "fold plan: unknown validation id '" + v + "'");
      if (!seen.insert(v).second) fail(ErrorCode::kContract, "fold plan: '" + v + "' validated in two folds");
    }
    std::set<std::string> tr(f.train.begin(), f.train.end());
    for (const auto& v : f.validation)
      if (tr.contains(v)) fail(ErrorCode::kContract, "fold plan: '" + v + "' in both train and validation");
    if (tr.size() + f.validation.size() != all.size()) fail(ErrorCode::kContract, "fold plan: fold does not cover all ids");
  }
  if (seen != all) fail(ErrorCode::kContract, "fold plan: validation sets do not cover all ids");
}

// Every slice in the index must come from a training patient.
inline void audit_no_leakage(const AugmentedDataset& ds, const Fold& fold) {
  const std::set<std::string> val(fold.validation.begin(), fold.validation.end());
  for (const auto& s : ds.slice_index())
    if (val.contains(ds.source(s.patient).id))
      fail(ErrorCode::kContract, "leakage: validation patient '" + ds.source(s.patient).id + "' in training slices");
}

}  // namespace swtr
