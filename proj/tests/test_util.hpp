#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "swtr/tensor.hpp"
#include "swtr/volume.hpp"

namespace swtr::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

inline VoxelMask random_mask(Dims d, std::uint64_t seed, double p_liver = 0.3, double p_lesion = 0.1,
                             Spacing s = {1.0, 1.0, 1.0}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VoxelMask m(d, s);
  for (auto& v : m.data) {
    const double r = u(rng);
    v = r < p_lesion ? label::kLesion : (r < p_lesion + p_liver ? label::kLiver : label::kBackground);
  }
  return m;
}

// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("swtr_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace swtr::testing
