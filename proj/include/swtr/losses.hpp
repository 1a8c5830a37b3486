#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "swtr/ops.hpp"

namespace swtr {

// One-hot encoding of integer labels: [b, h*w] labels -> [b, classes, h, w].
template <typename T>
Tensor<T> one_hot(std::span<const std::uint8_t> labels, std::size_t batch, std::size_t classes, std::size_t h,
                  std::size_t w) {
  require(labels.size() == batch * h * w, ErrorCode::kDimension, "one_hot: label count does not match shape");
  std::vector<T> out(batch * classes * h * w, T(0));
  const std::size_t hw = h * w;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t c = labels[b * hw + p];
      require(c < classes, ErrorCode::kDimension, "one_hot: label exceeds class count");
      out[(b * classes + c) * hw + p] = T(1);
    }
  return Tensor<T>::from({batch, classes, h, w}, std::move(out));
}

inline constexpr double kDiceSmooth = 1e-5;

// Soft Dice loss over foreground classes 1..C-1, sums taken over the whole batch:
//   1 - mean_c (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)
template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, const Tensor<T>& target, T eps = static_cast<T>(kDiceSmooth)) {
  if (probs.shape() != target.shape() || probs.rank() != 4 || probs.dim(1) < 2)
    fail(ErrorCode::kDimension, "soft_dice_loss: probs " + shape_str(probs.shape()) + " vs target " +
                                    shape_str(target.shape()));
  const std::size_t b = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
  const std::size_t fg = c - 1;
  std::vector<T> inter(c, T(0)), psum(c, T(0)), tsum(c, T(0));
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t k = 1; k < c; ++k) {
      const T* p = probs.vec().data() + (bi * c + k) * hw;
      const T* t = target.vec().data() + (bi * c + k) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        inter[k] += p[i] * t[i];
        psum[k] += p[i];
        tsum[k] += t[i];
      }
    }
  T dice_mean = 0;
  for (std::size_t k = 1; k < c; ++k) dice_mean += (T(2) * inter[k] + eps) / (psum[k] + tsum[k] + eps);
  dice_mean /= static_cast<T>(fg);
  return make_result<T>({1}, {T(1) - dice_mean}, {probs},
                        [probs, target, inter, psum, tsum, eps, b, c, hw, fg](Node<T>& self) {
    Tensor<T> gp = probs;
    const T g = self.grad[0];
    for (std::size_t k = 1; k < c; ++k) {
      const T den = psum[k] + tsum[k] + eps;
      const T num = T(2) * inter[k] + eps;
      // d/dp_i of -(num/den)/fg
      const T coef = -g / (static_cast<T>(fg) * den * den);
      for (std::size_t bi = 0; bi < b; ++bi) {
        const T* t = target.vec().data() + (bi * c + k) * hw;
        T* d = gp.grad().data() + (bi * c + k) * hw;
        for (std::size_t i = 0; i < hw; ++i) d[i] += coef * (T(2) * t[i] * den - num);
      }
    }
  }, "soft_dice_loss");
}

// Mean per-pixel negative log-likelihood of integer labels under softmax(logits, axis 1).
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  require(logits.rank() == 4, ErrorCode::kDimension, "cross_entropy_loss: expected [b,C,h,w] logits");
  const std::size_t b = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  require(labels.size() == b * hw, ErrorCode::kDimension, "cross_entropy_loss: label count mismatch");
  Tensor<T> logp = log_softmax(logits, 1);
  std::vector<std::int64_t> idx(b * hw);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t k = labels[bi * hw + p];
      require(k < c, ErrorCode::kDimension, "cross_entropy_loss: label exceeds class count");
      idx[bi * hw + p] = static_cast<std::int64_t>((bi * c + k) * hw + p);
    }
  Tensor<T> picked = gather(logp, IndexMap{{b * hw}, std::move(idx)});
  return scale(mean(picked), T(-1));
}

// Dice + CE with 1:1 weighting.
template <typename T>
Tensor<T> dice_ce_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const std::size_t b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  Tensor<T> probs = softmax(logits, 1);
  Tensor<T> target = one_hot<T>(labels, b, c, h, w);
  return add(soft_dice_loss(probs, target), cross_entropy_loss(logits, labels));
}

// Mean binary cross-entropy of per-class sigmoids against a one-hot target:
//   max(x,0) - x t + log(1 + exp(-|x|))
template <typename T>
Tensor<T> bce_with_logits_loss(const Tensor<T>& logits, const Tensor<T>& target) {
  if (logits.shape() != target.shape())
    fail(ErrorCode::kDimension, "bce_with_logits_loss: logits " + shape_str(logits.shape()) + " vs target " +
                                    shape_str(target.shape()));
  const std::size_t n = logits.size();
  const T* x = logits.vec().data();
  const T* t = target.vec().data();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::max(x[i], T(0)) - x[i] * t[i] + std::log1p(std::exp(-std::abs(x[i])));
  return make_result<T>({1}, {acc / static_cast<T>(n)}, {logits}, [logits, target, n](Node<T>& self) {
    Tensor<T> gl = logits;
    const T g = self.grad[0] / static_cast<T>(n);
    const T* x = logits.vec().data();
    const T* t = target.vec().data();
    T* d = gl.grad().data();
    for (std::size_t i = 0; i < n; ++i) d[i] += g * (T(1) / (T(1) + std::exp(-x[i])) - t[i]);
  }, "bce_with_logits_loss");
}

enum class LossKind { kDice, kCe, kBce, kDiceCe };

inline LossKind parse_loss(const std::string& s) {
  if (s == "dice") return LossKind::kDice;
  if (s == "ce") return LossKind::kCe;
  if (s == "bce") return LossKind::kBce;
  if (s == "dice+ce") return LossKind::kDiceCe;
  fail(ErrorCode::kConfig, "unknown loss '" + s + "' (expected dice, ce, bce or dice+ce)");
}

template <typename T>
Tensor<T> segmentation_loss(LossKind kind, const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const std::size_t b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  switch (kind) {
    case LossKind::kDice: return soft_dice_loss(softmax(logits, 1), one_hot<T>(labels, b, c, h, w));
    case LossKind::kCe: return cross_entropy_loss(logits, labels);
    case LossKind::kBce: return bce_with_logits_loss(logits, one_hot<T>(labels, b, c, h, w));
    case LossKind::kDiceCe: return dice_ce_loss(logits, labels);
  }
  fail(ErrorCode::kContract, "segmentation_loss: bad loss kind");
}

}  // namespace swtr
