#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "swtr/nn.hpp"
#include "swtr/weights_io.hpp"

namespace swtr {

enum class OptimizerKind { kSgd, kAdam, kRmsProp };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "rmsprop") return OptimizerKind::kRmsProp;
  fail(ErrorCode::kConfig, "unknown optimizer '" + s + "' (expected sgd, adam or rmsprop)");
}

inline std::string optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kRmsProp: return "rmsprop";
  }
  return "?";
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 1e-4;
  double momentum = 0.9;  // SGD
  double beta1 = 0.9, beta2 = 0.999;  // Adam
  double alpha = 0.99;  // RMSProp smoothing
  double eps = 1e-8;
};

// First-order optimizers over a ParameterStore. Per-parameter state slots are
// allocated lazily and exported as "optim.<slot>.<param>" tensors.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
    if (!(cfg_.lr >= 0.0) || !std::isfinite(cfg_.lr)) fail(ErrorCode::kConfig, "optimizer lr must be finite and non-negative");
  }

  const OptimizerConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t steps() const { return steps_; }

  void step(ParameterStore<T>& params) {
    const auto& items = params.items();
    ensure_state(items);
    ++steps_;
    const T lr = static_cast<T>(cfg_.lr);
    for (std::size_t p = 0; p < items.size(); ++p) {
      Tensor<T> w = items[p].second;
      if (!w.has_grad()) fail(ErrorCode::kContract, "optimizer step: parameter '" + items[p].first + "' has no gradient");
      auto g = w.grad();
      auto x = w.data();
      switch (cfg_.kind) {
        case OptimizerKind::kSgd: {
          const T mu = static_cast<T>(cfg_.momentum);
          auto& v = slots_[0][p];
          for (std::size_t i = 0; i < x.size(); ++i) {
            v[i] = mu * v[i] + g[i];
            x[i] -= lr * v[i];
          }
          break;
        }
        case OptimizerKind::kAdam: {
          const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2), eps = static_cast<T>(cfg_.eps);
          const T c1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(steps_)));
          const T c2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(steps_)));
          auto& m = slots_[0][p];
          auto& v = slots_[1][p];
          for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
          }
          break;
        }
        case OptimizerKind::kRmsProp: {
          const T a = static_cast<T>(cfg_.alpha), eps = static_cast<T>(cfg_.eps);
          auto& s = slots_[0][p];
          for (std::size_t i = 0; i < x.size(); ++i) {
            s[i] = a * s[i] + (T(1) - a) * g[i] * g[i];
            x[i] -= lr * g[i] / (std::sqrt(s[i]) + eps);
          }
          break;
        }
      }
    }
  }

  std::vector<TensorRecord> export_state(const ParameterStore<T>& params) const {
    std::vector<TensorRecord> out;
    out.push_back({"optim.steps", {2}, {static_cast<float>(steps_ & 0xffffffu), static_cast<float>(steps_ >> 24)}});
    const auto& items = params.items();
    for (std::size_t s = 0; s < slots_.size(); ++s)
      for (std::size_t p = 0; p < slots_[s].size(); ++p)
        out.push_back({"optim." + slot_name(s) + "." + items[p].first, items[p].second.shape(),
                       std::vector<float>(slots_[s][p].begin(), slots_[s][p].end())});
    return out;
  }

  // Restores state exported by export_state; missing slots leave a fresh optimizer.
  void import_state(const ParameterStore<T>& params, const WeightFile& wf) {
    const TensorRecord* st = wf.find("optim.steps");
    if (!st) return;
    steps_ = static_cast<std::uint64_t>(st->values[0]) + (static_cast<std::uint64_t>(st->values[1]) << 24);
    const auto& items = params.items();
    ensure_state(items);
    for (std::size_t s = 0; s < slots_.size(); ++s)
      for (std::size_t p = 0; p < items.size(); ++p) {
        const TensorRecord* r = wf.find("optim." + slot_name(s) + "." + items[p].first);
        if (!r) fail(ErrorCode::kTensorName, "checkpoint lacks optimizer slot for '" + items[p].first + "'");
        if (r->values.size() != slots_[s][p].size())
          fail(ErrorCode::kDimension, "optimizer slot for '" + items[p].first + "' has wrong length");
        for (std::size_t i = 0; i < r->values.size(); ++i) slots_[s][p][i] = static_cast<T>(r->values[i]);
      }
  }

 private:
  std::size_t slot_count() const { return cfg_.kind == OptimizerKind::kAdam ? 2 : 1; }
  std::string slot_name(std::size_t s) const {
    switch (cfg_.kind) {
      case OptimizerKind::kSgd: return "momentum";
      case OptimizerKind::kAdam: return s == 0 ? "adam_m" : "adam_v";
      case OptimizerKind::kRmsProp: return "square_avg";
    }
    return "?";
  }

  void ensure_state(const std::vector<std::pair<std::string, Tensor<T>>>& items) {
    if (!slots_.empty()) return;
    slots_.assign(slot_count(), {});
    for (auto& s : slots_)
      for (const auto& [_, t] : items) s.emplace_back(t.size(), T(0));
  }

  OptimizerConfig cfg_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<std::vector<T>>> slots_;
};

}  // namespace swtr
