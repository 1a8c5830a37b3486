#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "swtr/volume.hpp"

namespace swtr {

struct ClaheOptions {
  std::size_t tiles_x = 8;
  std::size_t tiles_y = 8;
  double clip_limit = 0.01;  // fraction of tile pixels per histogram bin
  std::size_t bins = 256;

  template <typename V>
  void visit(V& v) {
    v("tiles_x", tiles_x);
    v("tiles_y", tiles_y);
    v("clip_limit", clip_limit);
    v("bins", bins);
  }
};

namespace detail {

inline void check_finite(const VolumeImage& v, const char* op) {
  for (float x : v.data)
    if (!std::isfinite(x)) fail(ErrorCode::kDegenerateInput, std::string(op) + ": non-finite voxel value");
}

// Clipped, redistributed, normalized CDF of one tile.
inline std::vector<double> clahe_tile_map(const std::vector<std::size_t>& hist, std::size_t pixels, double clip_limit) {
  const std::size_t bins = hist.size();
  const auto clip = std::max<std::size_t>(1, static_cast<std::size_t>(clip_limit * static_cast<double>(pixels)));
  std::vector<std::size_t> h = hist;
  std::size_t excess = 0;
  for (auto& c : h)
    if (c > clip) {
      excess += c - clip;
      c = clip;
    }
  const std::size_t each = excess / bins, rest = excess % bins;
  for (std::size_t b = 0; b < bins; ++b) h[b] += each + (b < rest ? 1 : 0);
  std::vector<double> map(bins);
  std::size_t acc = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    acc += h[b];
    map[b] = static_cast<double>(acc) / static_cast<double>(pixels);
  }
  return map;
}

}  // namespace detail

// Contrast-limited adaptive histogram equalization on each axial slice. The
// intensity range is taken over the whole volume so every slice shares the
// same binning. Output in [0,1]; a constant volume maps to all zeros.
inline VolumeImage adaptive_hist_eq(const VolumeImage& v, const ClaheOptions& opt = {}) {
  if (!(opt.clip_limit > 0.0 && opt.clip_limit <= 1.0))
    fail(ErrorCode::kConfig, "clahe.clip_limit must lie in (0,1], got " + kv::format(opt.clip_limit));
  if (opt.bins < 2) fail(ErrorCode::kConfig, "clahe.bins must be at least 2");
  const std::size_t nx = v.dims.nx, ny = v.dims.ny;
  if (opt.tiles_x == 0 || opt.tiles_y == 0 || nx / opt.tiles_x < 2 || ny / opt.tiles_y < 2)
    fail(ErrorCode::kConfig, "clahe tiles " + std::to_string(opt.tiles_x) + "x" + std::to_string(opt.tiles_y) +
                                 " too fine for a " + std::to_string(nx) + "x" + std::to_string(ny) + " slice");
  detail::check_finite(v, "adaptive_hist_eq");
  VolumeImage out(v.dims, v.spacing, v.modality, 0.0f);
  if (v.data.empty()) return out;
  const auto [mn_it, mx_it] = std::minmax_element(v.data.begin(), v.data.end());
  const double lo = *mn_it, hi = *mx_it;
  if (hi <= lo) return out;

  const std::size_t bins = opt.bins, tx = opt.tiles_x, ty = opt.tiles_y;
  auto bin_of = [&](float x) {
    const auto b = static_cast<std::size_t>((static_cast<double>(x) - lo) / (hi - lo) * static_cast<double>(bins));
    return std::min(b, bins - 1);
  };
  // Tile t spans [t*n/T, (t+1)*n/T).
  auto edge = [](std::size_t t, std::size_t n, std::size_t T) { return t * n / T; };
  std::vector<std::vector<double>> maps(tx * ty);
  std::vector<std::size_t> hist(bins);
  for (std::size_t z = 0; z < v.dims.nz; ++z) {
    const float* slice = v.data.data() + z * v.slice_size();
    for (std::size_t j = 0; j < ty; ++j)
      for (std::size_t i = 0; i < tx; ++i) {
        std::fill(hist.begin(), hist.end(), 0);
        const std::size_t x0 = edge(i, nx, tx), x1 = edge(i + 1, nx, tx), y0 = edge(j, ny, ty), y1 = edge(j + 1, ny, ty);
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) ++hist[bin_of(slice[y * nx + x])];
        maps[j * tx + i] = detail::clahe_tile_map(hist, (x1 - x0) * (y1 - y0), opt.clip_limit);
      }
    // Bilinear blend of the four nearest tile mappings, clamped at the borders.
    auto tile_coord = [&](std::size_t p, std::size_t n, std::size_t T, std::size_t& t0, std::size_t& t1, double& w) {
      const double c = (static_cast<double>(p) + 0.5) * static_cast<double>(T) / static_cast<double>(n) - 0.5;
      if (c <= 0.0) {
        t0 = t1 = 0;
        w = 0.0;
      } else if (c >= static_cast<double>(T - 1)) {
        t0 = t1 = T - 1;
        w = 0.0;
      } else {
        t0 = static_cast<std::size_t>(c);
        t1 = t0 + 1;
        w = c - static_cast<double>(t0);
      }
    };
    float* dst = out.data.data() + z * v.slice_size();
    for (std::size_t y = 0; y < ny; ++y) {
      std::size_t j0, j1;
      double wy;
      tile_coord(y, ny, ty, j0, j1, wy);
      for (std::size_t x = 0; x < nx; ++x) {
        std::size_t i0, i1;
        double wx;
        tile_coord(x, nx, tx, i0, i1, wx);
        const std::size_t b = bin_of(slice[y * nx + x]);
        const double top = (1 - wx) * maps[j0 * tx + i0][b] + wx * maps[j0 * tx + i1][b];
        const double bot = (1 - wx) * maps[j1 * tx + i0][b] + wx * maps[j1 * tx + i1][b];
        dst[y * nx + x] = static_cast<float>(std::clamp((1 - wy) * top + wy * bot, 0.0, 1.0));
      }
    }
  }
  return out;
}

namespace detail {

// Source coordinate of output pixel centre p when n_in samples map onto n_out.
inline double source_coord(std::size_t p, std::size_t n_in, std::size_t n_out) {
  return (static_cast<double>(p) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
}

inline Spacing resampled_spacing(const Grid3<float>& g, std::size_t h, std::size_t w) {
  return {g.spacing.x * static_cast<double>(g.dims.nx) / static_cast<double>(w),
          g.spacing.y * static_cast<double>(g.dims.ny) / static_cast<double>(h), g.spacing.z};
}

}  // namespace detail

// In-plane bilinear resampling of every slice to h x w; slice count unchanged.
inline VolumeImage resample(const VolumeImage& v, std::size_t h, std::size_t w) {
  require(h >= 1 && w >= 1, ErrorCode::kConfig, "resample target extents must be at least 1");
  if (h == v.dims.ny && w == v.dims.nx) return v;
  VolumeImage out({w, h, v.dims.nz}, detail::resampled_spacing(v, h, w), v.modality);
  const std::size_t nx = v.dims.nx, ny = v.dims.ny;
  struct Tap {
    std::size_t i0, i1;
    double w;
  };
  auto taps = [](std::size_t n_in, std::size_t n_out) {
    std::vector<Tap> t(n_out);
    for (std::size_t p = 0; p < n_out; ++p) {
      const double c = std::clamp(detail::source_coord(p, n_in, n_out), 0.0, static_cast<double>(n_in - 1));
      const auto i0 = static_cast<std::size_t>(c);
      t[p] = {i0, std::min(i0 + 1, n_in - 1), c - static_cast<double>(i0)};
    }
    return t;
  };
  const auto tx = taps(nx, w), ty = taps(ny, h);
  for (std::size_t z = 0; z < v.dims.nz; ++z) {
    const float* src = v.data.data() + z * v.slice_size();
    float* dst = out.data.data() + z * out.slice_size();
    for (std::size_t y = 0; y < h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < w; ++x) {
        const Tap& b = tx[x];
        const double top = (1 - b.w) * src[a.i0 * nx + b.i0] + b.w * src[a.i0 * nx + b.i1];
        const double bot = (1 - b.w) * src[a.i1 * nx + b.i0] + b.w * src[a.i1 * nx + b.i1];
        dst[y * w + x] = static_cast<float>((1 - a.w) * top + a.w * bot);
      }
    }
  }
  return out;
}

// Nearest-neighbour variant for label masks.
inline VoxelMask resample_nearest(const VoxelMask& m, std::size_t h, std::size_t w) {
  require(h >= 1 && w >= 1, ErrorCode::kConfig, "resample target extents must be at least 1");
  if (h == m.dims.ny && w == m.dims.nx) return m;
  const Spacing sp{m.spacing.x * static_cast<double>(m.dims.nx) / static_cast<double>(w),
                   m.spacing.y * static_cast<double>(m.dims.ny) / static_cast<double>(h), m.spacing.z};
  VoxelMask out({w, h, m.dims.nz}, sp);
  auto nearest = [](std::size_t p, std::size_t n_in, std::size_t n_out) {
    const auto i = static_cast<std::size_t>((static_cast<double>(p) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out));
    return std::min(i, n_in - 1);
  };
  for (std::size_t z = 0; z < m.dims.nz; ++z)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.at(x, y, z) = m.at(nearest(x, m.dims.nx, w), nearest(y, m.dims.ny, h), z);
  return out;
}

// Whole-volume z-score: mean 0, (population) standard deviation 1.
inline VolumeImage zscore_normalize(const VolumeImage& v) {
  detail::check_finite(v, "zscore_normalize");
  require(!v.data.empty(), ErrorCode::kDegenerateInput, "zscore_normalize: empty volume");
  double mean = 0.0;
  for (float x : v.data) mean += x;
  mean /= static_cast<double>(v.data.size());
  double var = 0.0;
  for (float x : v.data) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.data.size());
  if (!(var > 0.0)) fail(ErrorCode::kDegenerateInput, "zscore_normalize: volume has zero variance");
  const double inv = 1.0 / std::sqrt(var);
  VolumeImage out = v;
  for (auto& x : out.data) x = static_cast<float>((x - mean) * inv);
  return out;
}

inline constexpr double kHuLow = -100.0;
inline constexpr double kHuHigh = 400.0;

// Linear-interpolation percentile (q in [0,100]) of unsorted values.
inline double percentile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCode::kDegenerateInput, "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= values.size()) return values.back();
  const double f = pos - static_cast<double>(i);
  return values[i] + f * (values[i + 1] - values[i]);
}

// Clip to the HU window, then map the 5th..95th percentile of the foreground
// (clipped value above the window floor) onto [0,1], clamping outside.
inline VolumeImage ct_window_normalize(const VolumeImage& v) {
  if (v.modality != Modality::kCT) fail(ErrorCode::kContract, "ct_window_normalize: volume is not CT");
  detail::check_finite(v, "ct_window_normalize");
  std::vector<double> fg;
  for (float x : v.data) {
    const double c = std::clamp(static_cast<double>(x), kHuLow, kHuHigh);
    if (c > kHuLow) fg.push_back(c);
  }
  if (fg.empty()) fail(ErrorCode::kDegenerateInput, "ct_window_normalize: no foreground above " + kv::format(kHuLow) + " HU");
  const double p5 = percentile(fg, 5.0), p95 = percentile(std::move(fg), 95.0);
  if (!(p95 > p5)) fail(ErrorCode::kDegenerateInput, "ct_window_normalize: foreground 5th and 95th percentiles coincide");
  VolumeImage out = v;
  for (auto& x : out.data) {
    const double c = std::clamp(static_cast<double>(x), kHuLow, kHuHigh);
    x = static_cast<float>(std::clamp((c - p5) / (p95 - p5), 0.0, 1.0));
  }
  return out;
}

// Bias-field correction is out of scope; the stage is kept so the chain has its full shape.
inline VolumeImage n4_bias_correction(const VolumeImage& v) { return v; }

struct PreprocessConfig {
  std::size_t height = 224;
  std::size_t width = 224;
  ClaheOptions clahe;

  template <typename V>
  void visit(V& v) {
    v("height", height);
    v("width", width);
    v("clahe.tiles_x", clahe.tiles_x);
    v("clahe.tiles_y", clahe.tiles_y);
    v("clahe.clip_limit", clahe.clip_limit);
    v("clahe.bins", clahe.bins);
  }
};

// MR: CLAHE -> resample -> z-score -> N4.
inline VolumeImage preprocess_mr(const VolumeImage& v, const PreprocessConfig& cfg) {
  return n4_bias_correction(zscore_normalize(resample(adaptive_hist_eq(v, cfg.clahe), cfg.height, cfg.width)));
}

// CT: HU window/percentile normalization -> CLAHE -> resample.
inline VolumeImage preprocess_ct(const VolumeImage& v, const PreprocessConfig& cfg) {
  return resample(adaptive_hist_eq(ct_window_normalize(v), cfg.clahe), cfg.height, cfg.width);
}

inline VolumeImage preprocess_image(const VolumeImage& v, const PreprocessConfig& cfg) {
  return v.modality == Modality::kMR ? preprocess_mr(v, cfg) : preprocess_ct(v, cfg);
}

// Masks only ever pass through the geometric stage.
inline VoxelMask preprocess_mask(const VoxelMask& m, const PreprocessConfig& cfg) {
  return resample_nearest(m, cfg.height, cfg.width);
}

}  // namespace swtr
