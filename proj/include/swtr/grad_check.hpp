#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "swtr/tensor.hpp"

namespace swtr {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
  // Set when the function or its derivative produced a non-finite value.
  std::optional<std::size_t> nonfinite_tensor;
  std::optional<std::size_t> nonfinite_index;

  bool ok(double tol) const { return !nonfinite_index && max_rel_error < tol; }
};

// Compares reverse-mode gradients of a scalar function of `inputs` against
// central differences. The error per coordinate is
//   |analytic - numeric| / max(1, |analytic|).
// `max_coords` > 0 restricts the check to that many coordinates sampled
// uniformly (with `seed`) across all inputs; 0 checks every coordinate.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> inputs, double eps,
                           std::size_t max_coords = 0, std::uint64_t seed = 0) {
  require(eps >= 1e-7 && eps <= 1e-2, ErrorCode::kConfig, "grad_check: eps must lie in [1e-7, 1e-2]");
  GradCheckResult res;
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<T> loss = f();
  require(loss.size() == 1, ErrorCode::kContract, "grad_check: function must be scalar-valued");
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    res.nonfinite_tensor = 0;
    res.nonfinite_index = 0;
    return res;
  }
  backward(loss);
  std::vector<std::vector<T>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti)
    for (std::size_t i = 0; i < inputs[ti].size(); ++i) coords.emplace_back(ti, i);
  if (max_coords > 0 && coords.size() > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }

  NoGradGuard no_grad;
  for (const auto& [ti, i] : coords) {
    T& x = inputs[ti].data()[i];
    const T saved = x;
    const T h = static_cast<T>(eps);
    const T xp = saved + h;
    const T xm = saved - h;
    x = xp;
    const double fp = static_cast<double>(f().item());
    x = xm;
    const double fm = static_cast<double>(f().item());
    x = saved;
    const double a = static_cast<double>(analytic[ti][i]);
    // Divide by the representable step, not the nominal one.
    const double numeric = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
    ++res.coordinates_checked;
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(a)) {
      res.nonfinite_tensor = ti;
      res.nonfinite_index = i;
      return res;
    }
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_tensor = ti;
      res.worst_index = i;
    }
  }
  return res;
}

// Single-input convenience form.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x, double eps) {
  return grad_check<T>([&] { return f(x); }, {x}, eps);
}

}  // namespace swtr
