#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iterator>
#include <limits>
#include <vector>

#include "swtr/swin.hpp"
#include "swtr/volume.hpp"

// Brute-force reference implementations shared by unit and acceptance tests.
namespace swtr::oracle {

// Counting oracles.
inline double dice_oracle(const VoxelMask& x, const VoxelMask& y) {
  std::vector<std::size_t> sx, sy;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    if (x.data[i]) sx.push_back(i);
    if (y.data[i]) sy.push_back(i);
  }
  if (sx.empty() && sy.empty()) return 1.0;
  std::vector<std::size_t> inter;
  std::set_intersection(sx.begin(), sx.end(), sy.begin(), sy.end(), std::back_inserter(inter));
  return 2.0 * static_cast<double>(inter.size()) / static_cast<double>(sx.size() + sy.size());
}

inline std::vector<std::array<int, 3>> surface_oracle(const VoxelMask& m) {
  std::vector<std::array<int, 3>> out;
  const int nx = static_cast<int>(m.dims.nx), ny = static_cast<int>(m.dims.ny), nz = static_cast<int>(m.dims.nz);
  auto fg = [&](int x, int y, int z) {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz && m.at(x, y, z) != 0;
  };
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!fg(x, y, z)) continue;
        const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        bool edge = false;
        for (const auto& o : off) edge |= !fg(x + o[0], y + o[1], z + o[2]);
        if (edge) out.push_back({x, y, z});
      }
  return out;
}

inline double directed_oracle(const std::vector<std::array<int, 3>>& a, const std::vector<std::array<int, 3>>& b, const Spacing& s) {
  double best = 0;
  for (const auto& p : a) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      const double dx = (p[0] - q[0]) * s.x, dy = (p[1] - q[1]) * s.y, dz = (p[2] - q[2]) * s.z;
      m = std::min(m, dx * dx + dy * dy + dz * dz);
    }
    best = std::max(best, m);
  }
  return std::sqrt(best);
}

inline double hausdorff_oracle(const VoxelMask& x, const VoxelMask& y, const Spacing& s) {
  const auto a = surface_oracle(x), b = surface_oracle(y);
  return std::max(directed_oracle(a, b, s), directed_oracle(b, a, s));
}

inline double fp_oracle(const VoxelMask& pred, const VoxelMask& ref) {
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    if (pred.data[i] == 2) (ref.data[i] == 2 ? tp : fp) += 1;
  return tp + fp == 0 ? 0.0 : fp / (tp + fp);
}

// Plain-loop multi-head attention of all n tokens against all n tokens of one
// sequence x[n, d], with optional relative bias and an exclusion predicate.
inline std::vector<double> brute_force_attention(const std::vector<double>& x, std::size_t n, std::size_t d,
                                          const WindowAttention<double>& a, std::size_t win,
                                          const std::function<bool(std::size_t, std::size_t)>& excluded) {
  const std::size_t heads = a.heads, hd = d / heads;
  const auto& wq = a.qkv.weight.vec();
  const auto& bq = a.qkv.bias.vec();
  std::vector<double> qkv(n * 3 * d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t o = 0; o < 3 * d; ++o) {
      double acc = bq[o];
      for (std::size_t i = 0; i < d; ++i) acc += x[t * d + i] * wq[i * 3 * d + o];
      qkv[t * 3 * d + o] = acc;
    }
  std::vector<double> ctx(n * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n, 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        if (excluded && excluded(i, j)) {
          s[j] = -1e300;
          continue;
        }
        double acc = 0;
        for (std::size_t k = 0; k < hd; ++k) acc += qkv[i * 3 * d + h * hd + k] * qkv[j * 3 * d + d + h * hd + k];
        acc /= std::sqrt(static_cast<double>(hd));
        if (a.rel_bias_table.defined()) {
          const long dy = static_cast<long>(i / win) - static_cast<long>(j / win) + static_cast<long>(win) - 1;
          const long dx = static_cast<long>(i % win) - static_cast<long>(j % win) + static_cast<long>(win) - 1;
          acc += a.rel_bias_table.vec()[(static_cast<std::size_t>(dy) * (2 * win - 1) + static_cast<std::size_t>(dx)) * heads + h];
        }
        s[j] = acc;
        mx = std::max(mx, acc);
      }
      double z = 0;
      for (std::size_t j = 0; j < n; ++j) z += s[j] > -1e299 ? std::exp(s[j] - mx) : 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (s[j] <= -1e299) continue;
        const double p = std::exp(s[j] - mx) / z;
        for (std::size_t k = 0; k < hd; ++k) ctx[i * d + h * hd + k] += p * qkv[j * 3 * d + 2 * d + h * hd + k];
      }
    }
  const auto& wp = a.proj.weight.vec();
  const auto& bp = a.proj.bias.vec();
  std::vector<double> out(n * d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t o = 0; o < d; ++o) {
      double acc = bp[o];
      for (std::size_t i = 0; i < d; ++i) acc += ctx[t * d + i] * wp[i * d + o];
      out[t * d + o] = acc;
    }
  return out;
}

}  // namespace swtr::oracle
