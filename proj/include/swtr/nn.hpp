#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "swtr/ops.hpp"

namespace swtr {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; derives independent stream seeds from a master seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(master) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

// Named, insertion-ordered parameter registry.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    require(!index_.contains(name), ErrorCode::kTensorName, "duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    index_.emplace(name, items_.size());
    items_.emplace_back(name, t);
    return t;
  }
  const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool contains(const std::string& name) const { return index_.contains(name); }
  Tensor<T> at(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorCode::kTensorName, "unknown parameter '" + name + "'");
    return items_[it->second].second;
  }
  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.size();
    return n;
  }
  void zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
  std::map<std::string, std::size_t> index_;
};

namespace init {

template <typename T>
Tensor<T> normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// Normal truncated at two standard deviations by resampling.
template <typename T>
Tensor<T> trunc_normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(numel(shape));
  for (auto& x : v) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    x = static_cast<T>(z * stddev);
  }
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// He (Kaiming) normal for ReLU networks: std = sqrt(2 / fan_in).
template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  return normal<T>(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

}  // namespace init

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static Linear make(ParameterStore<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                     double stddev = 0.02) {
    Linear l;
    l.weight = ps.add(name + ".weight", init::trunc_normal<T>({in, out}, stddev, rng));
    l.bias = ps.add(name + ".bias", Tensor<T>::zeros({out}));
    return l;
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;
  T eps = T(1e-5);

  static LayerNorm make(ParameterStore<T>& ps, const std::string& name, std::size_t d) {
    LayerNorm n;
    n.gamma = ps.add(name + ".weight", Tensor<T>::full({d}, T(1)));
    n.beta = ps.add(name + ".bias", Tensor<T>::zeros({d}));
    return n;
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out] or undefined
  std::size_t stride = 1, pad = 0;

  static Conv2d make(ParameterStore<T>& ps, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t k, std::size_t stride, std::size_t pad, Rng& rng, bool with_bias = true) {
    Conv2d c;
    c.weight = ps.add(name + ".weight", init::he_normal<T>({out, in, k, k}, in * k * k, rng));
    if (with_bias) c.bias = ps.add(name + ".bias", Tensor<T>::zeros({out}));
    c.stride = stride;
    c.pad = pad;
    return c;
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

}  // namespace swtr
