#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "swtr/mc_tables.hpp"
#include "swtr/metrics.hpp"

namespace swtr {

// ---------------------------------------------------------------------------
// Connected components

struct Component {
  std::vector<VoxelCoord> voxels;  // breadth-first from the seed (first in scan order)
};

// 26-connected components of the nonzero voxels, ordered by their first voxel in scan order.
inline std::vector<Component> connected_components(const VoxelMask& m) {
  std::vector<Component> comps;
  std::vector<std::uint8_t> seen(m.data.size(), 0);
  const auto nx = static_cast<std::int64_t>(m.dims.nx), ny = static_cast<std::int64_t>(m.dims.ny),
             nz = static_cast<std::int64_t>(m.dims.nz);
  std::deque<VoxelCoord> queue;
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        const std::size_t i = m.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z));
        if (!m.data[i] || seen[i]) continue;
        Component c;
        seen[i] = 1;
        queue.push_back({static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), static_cast<std::int32_t>(z)});
        while (!queue.empty()) {
          const VoxelCoord p = queue.front();
          queue.pop_front();
          c.voxels.push_back(p);
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const std::int64_t qx = p.x + dx, qy = p.y + dy, qz = p.z + dz;
                if (!m.contains(qx, qy, qz)) continue;
                const std::size_t j =
                    m.index(static_cast<std::size_t>(qx), static_cast<std::size_t>(qy), static_cast<std::size_t>(qz));
                if (m.data[j] && !seen[j]) {
                  seen[j] = 1;
                  queue.push_back({static_cast<std::int32_t>(qx), static_cast<std::int32_t>(qy),
                                   static_cast<std::int32_t>(qz)});
                }
              }
        }
        comps.push_back(std::move(c));
      }
  return comps;
}

inline VoxelMask component_mask(const Component& c, const Dims& dims, const Spacing& spacing) {
  VoxelMask m(dims, spacing);
  for (const auto& v : c.voxels)
    m.at(static_cast<std::size_t>(v.x), static_cast<std::size_t>(v.y), static_cast<std::size_t>(v.z)) = 1;
  return m;
}

// ---------------------------------------------------------------------------
// Surface area and sphericity

// Sphericity from volume and surface area: pi^(1/3) (6V)^(2/3) / A.
inline double sphericity_from(double volume, double area) {
  return std::cbrt(std::numbers::pi) * std::pow(6.0 * volume, 2.0 / 3.0) / area;
}

// Scalar field on a local voxel grid (x fastest), used for isosurfacing.
struct LocalField {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::vector<double> v;

  double at(std::size_t x, std::size_t y, std::size_t z) const { return v[(z * ny + y) * nx + x]; }
  double max() const { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }
};

// Indicator of the voxel set on its bounding box grown by `margin` voxels.
inline LocalField indicator_field(const std::vector<VoxelCoord>& voxels, std::size_t margin) {
  require(!voxels.empty(), ErrorCode::kDegenerateInput, "indicator of an empty voxel set");
  std::int32_t lo[3] = {voxels[0].x, voxels[0].y, voxels[0].z}, hi[3] = {lo[0], lo[1], lo[2]};
  for (const auto& v : voxels) {
    lo[0] = std::min(lo[0], v.x), lo[1] = std::min(lo[1], v.y), lo[2] = std::min(lo[2], v.z);
    hi[0] = std::max(hi[0], v.x), hi[1] = std::max(hi[1], v.y), hi[2] = std::max(hi[2], v.z);
  }
  LocalField f;
  f.nx = static_cast<std::size_t>(hi[0] - lo[0]) + 1 + 2 * margin;
  f.ny = static_cast<std::size_t>(hi[1] - lo[1]) + 1 + 2 * margin;
  f.nz = static_cast<std::size_t>(hi[2] - lo[2]) + 1 + 2 * margin;
  f.v.assign(f.nx * f.ny * f.nz, 0.0);
  const auto m = static_cast<std::int64_t>(margin);
  for (const auto& v : voxels) {
    const auto x = static_cast<std::size_t>(v.x - lo[0] + m), y = static_cast<std::size_t>(v.y - lo[1] + m),
               z = static_cast<std::size_t>(v.z - lo[2] + m);
    f.v[(z * f.ny + y) * f.nx + x] = 1.0;
  }
  return f;
}

// Separable Gaussian blur in voxel units, kernel truncated at 3 sigma.
inline void gaussian_blur(LocalField& f, double sigma) {
  if (sigma <= 0.0) return;
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i)
    sum += k[static_cast<std::size_t>(i + r)] = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
  for (auto& w : k) w /= sum;
  const std::size_t n[3] = {f.nx, f.ny, f.nz};
  const std::size_t stride[3] = {1, f.nx, f.nx * f.ny};
  std::vector<double> out(f.v.size());
  for (int axis = 0; axis < 3; ++axis) {
    const auto len = static_cast<std::ptrdiff_t>(n[axis]);
    const std::size_t st = stride[axis];
    for (std::size_t i = 0; i < f.v.size(); ++i) {
      const auto pos = static_cast<std::ptrdiff_t>((i / st) % n[axis]);
      double acc = 0.0;
      for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(-r, -pos); j <= std::min<std::ptrdiff_t>(r, len - 1 - pos); ++j)
        acc += k[static_cast<std::size_t>(j + r)] * f.v[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + j * static_cast<std::ptrdiff_t>(st))];
      out[i] = acc;
    }
    f.v.swap(out);
  }
}

struct MeshMeasure {
  double area = 0.0;    // mm^2
  double volume = 0.0;  // mm^3 enclosed (closed surfaces only)
};

// Marching-cubes isosurface of `f` at `iso` with linear edge interpolation;
// area and enclosed volume (divergence theorem) in mm units.
inline MeshMeasure isosurface_measure(const LocalField& f, double iso, const Spacing& s) {
  MeshMeasure m;
  double signed_volume = 0.0;
  for (std::size_t z = 0; z + 1 < f.nz; ++z)
    for (std::size_t y = 0; y + 1 < f.ny; ++y)
      for (std::size_t x = 0; x + 1 < f.nx; ++x) {
        double val[8];
        int cube = 0;
        for (int k = 0; k < 8; ++k) {
          const auto& c = mc::kCorners[static_cast<std::size_t>(k)];
          val[k] = f.at(x + static_cast<std::size_t>(c[0]), y + static_cast<std::size_t>(c[1]), z + static_cast<std::size_t>(c[2]));
          if (val[k] < iso) cube |= 1 << k;
        }
        if (cube == 0 || cube == 255) continue;
        const auto& tri = mc::kTriTable[cube];
        for (int t = 0; tri[t] >= 0; t += 3) {
          double p[3][3];
          for (int j = 0; j < 3; ++j) {
            const auto& e = mc::kEdgeCorners[static_cast<std::size_t>(tri[t + j])];
            const auto& a = mc::kCorners[static_cast<std::size_t>(e[0])];
            const auto& b = mc::kCorners[static_cast<std::size_t>(e[1])];
            const double u = (iso - val[e[0]]) / (val[e[1]] - val[e[0]]);
            const double base[3] = {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
            const double sp[3] = {s.x, s.y, s.z};
            for (int d = 0; d < 3; ++d) p[j][d] = (base[d] + a[d] + u * (b[d] - a[d])) * sp[d];
          }
          const double u[3] = {p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]};
          const double w[3] = {p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]};
          const double cx = u[1] * w[2] - u[2] * w[1], cy = u[2] * w[0] - u[0] * w[2], cz = u[0] * w[1] - u[1] * w[0];
          m.area += 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
          signed_volume += (p[0][0] * (p[1][1] * p[2][2] - p[1][2] * p[2][1]) -
                            p[0][1] * (p[1][0] * p[2][2] - p[1][2] * p[2][0]) +
                            p[0][2] * (p[1][0] * p[2][1] - p[1][1] * p[2][0])) / 6.0;
        }
      }
  m.volume = std::abs(signed_volume);
  return m;
}

// Area of the closed voxel hull: every exposed voxel face.
inline double voxel_hull_area(const std::vector<VoxelCoord>& voxels, const Spacing& s) {
  struct Key {
    std::int32_t x, y, z;
    bool operator<(const Key& o) const { return std::tie(z, y, x) < std::tie(o.z, o.y, o.x); }
  };
  std::vector<Key> keys;
  keys.reserve(voxels.size());
  for (const auto& v : voxels) keys.push_back({v.x, v.y, v.z});
  std::sort(keys.begin(), keys.end());
  auto has = [&](std::int32_t x, std::int32_t y, std::int32_t z) {
    return std::binary_search(keys.begin(), keys.end(), Key{x, y, z});
  };
  double a = 0.0;
  for (const auto& k : keys) {
    if (!has(k.x - 1, k.y, k.z)) a += s.y * s.z;
    if (!has(k.x + 1, k.y, k.z)) a += s.y * s.z;
    if (!has(k.x, k.y - 1, k.z)) a += s.x * s.z;
    if (!has(k.x, k.y + 1, k.z)) a += s.x * s.z;
    if (!has(k.x, k.y, k.z - 1)) a += s.x * s.y;
    if (!has(k.x, k.y, k.z + 1)) a += s.x * s.y;
  }
  return a;
}

struct ShapeOptions {
  double smoothing_sigma = 1.0;  // voxels
  int iso_iterations = 48;
};

struct ShapeMeasure {
  double volume_mm3 = 0.0;
  double area_mm2 = 0.0;
  double sphericity = 0.0;
  double iso_level = 0.0;
  bool hull_fallback = false;
};

// V = voxel count x voxel volume. A is the marching-cubes area of the
// Gaussian-smoothed indicator at the level whose isosurface encloses exactly
// V. Falls back to the voxel hull if no closed surface is found.
inline ShapeMeasure measure_shape(const Component& c, const Spacing& s, const ShapeOptions& opt = {}) {
  require(!c.voxels.empty(), ErrorCode::kDegenerateInput, "sphericity of an empty component");
  ShapeMeasure m;
  m.volume_mm3 = static_cast<double>(c.voxels.size()) * s.voxel_volume();
  const auto margin = static_cast<std::size_t>(std::ceil(3.0 * std::max(opt.smoothing_sigma, 0.0))) + 1;
  LocalField f = indicator_field(c.voxels, margin);
  gaussian_blur(f, opt.smoothing_sigma);
  // Enclosed volume decreases as the level rises.
  double lo = 0.0, hi = f.max();
  for (int it = 0; it < opt.iso_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (isosurface_measure(f, mid, s).volume > m.volume_mm3) lo = mid;
    else hi = mid;
  }
  m.iso_level = 0.5 * (lo + hi);
  m.area_mm2 = m.iso_level > 0.0 ? isosurface_measure(f, m.iso_level, s).area : 0.0;
  m.sphericity = m.area_mm2 > 0.0 ? sphericity_from(m.volume_mm3, m.area_mm2) : 0.0;
  if (!(m.sphericity > 0.0 && m.sphericity <= 1.0)) {
    m.area_mm2 = voxel_hull_area(c.voxels, s);
    m.sphericity = sphericity_from(m.volume_mm3, m.area_mm2);
    m.hull_fallback = true;
  }
  return m;
}

inline double sphericity(const Component& c, const Spacing& s) { return measure_shape(c, s).sphericity; }

// ---------------------------------------------------------------------------
// Distance transform and surface distance

namespace detail {
// Exact 1D squared distance transform (lower envelope of parabolas) with
// sample positions i * step.
inline void edt_1d(const double* f, std::size_t n, double step, double* d, std::vector<std::size_t>& v,
                   std::vector<double>& zb) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  zb.assign(n + 1, 0.0);
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (!any) {
      v[0] = q;
      zb[0] = -inf;
      zb[1] = inf;
      any = true;
      continue;
    }
    const double xq = static_cast<double>(q) * step;
    for (;;) {
      const double xv = static_cast<double>(v[k]) * step;
      const double sx = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
      if (sx <= zb[k]) {
        if (k == 0) {
          v[0] = q;
          zb[0] = -inf;
          zb[1] = inf;
          break;
        }
        --k;
        continue;
      }
      ++k;
      v[k] = q;
      zb[k] = sx;
      zb[k + 1] = inf;
      break;
    }
  }
  if (!any) {
    std::fill(d, d + n, inf);
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double xq = static_cast<double>(q) * step;
    while (zb[k + 1] < xq) ++k;
    const double dx = xq - static_cast<double>(v[k]) * step;
    d[q] = dx * dx + f[v[k]];
  }
}
}  // namespace detail

// Squared Euclidean distance (mm^2) from every voxel to the nearest nonzero
// voxel of `features`, honouring anisotropic spacing.
inline std::vector<double> squared_distance_transform(const VoxelMask& features) {
  const std::size_t nx = features.dims.nx, ny = features.dims.ny, nz = features.dims.nz;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(features.data.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = features.data[i] ? 0.0 : inf;
  std::vector<double> line, out;
  std::vector<std::size_t> v;
  std::vector<double> zb;
  auto pass = [&](std::size_t n, std::size_t stride, std::size_t count, auto base_of, double step) {
    line.resize(n);
    out.resize(n);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t base = base_of(c);
      for (std::size_t i = 0; i < n; ++i) line[i] = d[base + i * stride];
      detail::edt_1d(line.data(), n, step, out.data(), v, zb);
      for (std::size_t i = 0; i < n; ++i) d[base + i * stride] = out[i];
    }
  };
  pass(nx, 1, ny * nz, [&](std::size_t c) { return c * nx; }, features.spacing.x);
  pass(ny, nx, nx * nz, [&](std::size_t c) { return (c / nx) * nx * ny + c % nx; }, features.spacing.y);
  pass(nz, nx * ny, nx * ny, [&](std::size_t c) { return c; }, features.spacing.z);
  return d;
}

// Distance field to the liver surface (6-connectivity boundary voxels).
class LiverSurfaceField {
 public:
  explicit LiverSurfaceField(const VoxelMask& liver) : liver_(liver) {
    VoxelMask boundary(liver.dims, liver.spacing);
    const auto b = boundary_voxels(liver);
    if (b.empty()) fail(ErrorCode::kDegenerateInput, "surface_distance: empty liver mask");
    for (const auto& p : b)
      boundary.at(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.z)) = 1;
    sq_ = squared_distance_transform(boundary);
  }

  // Minimum distance (mm) from the component's outline to the liver surface.
  // `outside` is set when some component voxel lies outside the liver.
  double distance(const Component& c, bool* outside = nullptr) const {
    const VoxelMask m = component_mask(c, liver_.dims, liver_.spacing);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : boundary_voxels(m))
      best = std::min(best, sq_[liver_.index(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y),
                                             static_cast<std::size_t>(p.z))]);
    if (outside) {
      *outside = false;
      for (const auto& p : c.voxels)
        if (!liver_.at(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.z)))
          *outside = true;
    }
    return std::sqrt(best);
  }

 private:
  VoxelMask liver_;
  std::vector<double> sq_;
};

inline double surface_distance(const Component& c, const VoxelMask& liver, bool* outside = nullptr) {
  return LiverSurfaceField(liver).distance(c, outside);
}

// ---------------------------------------------------------------------------
// Per-lesion statistics and stratification

enum class ShapeClass { kSpherical, kIrregular };
enum class SizeClass { kBelow1, k1To5, k5To10, kAbove10 };
enum class LocationClass { kSurfaceNear, kCentered };

inline constexpr double kSphericalThreshold = 0.9;
inline constexpr double kSurfaceNearMm = 10.0;

inline ShapeClass shape_class(double psi) { return psi > kSphericalThreshold ? ShapeClass::kSpherical : ShapeClass::kIrregular; }

// Bins in cm^3: [0,1), [1,5), [5,10), [10,inf).
inline SizeClass size_class(double volume_mm3) {
  const double cm3 = volume_mm3 / 1000.0;
  if (cm3 < 1.0) return SizeClass::kBelow1;
  if (cm3 < 5.0) return SizeClass::k1To5;
  if (cm3 < 10.0) return SizeClass::k5To10;
  return SizeClass::kAbove10;
}

inline LocationClass location_class(double d_mm) { return d_mm < kSurfaceNearMm ? LocationClass::kSurfaceNear : LocationClass::kCentered; }

inline const char* to_string(ShapeClass c) { return c == ShapeClass::kSpherical ? "spherical" : "irregular"; }
inline const char* to_string(SizeClass c) {
  switch (c) {
    case SizeClass::kBelow1: return "<1cm3";
    case SizeClass::k1To5: return "1-5cm3";
    case SizeClass::k5To10: return "5-10cm3";
    case SizeClass::kAbove10: return ">10cm3";
  }
  return "?";
}
inline const char* to_string(LocationClass c) { return c == LocationClass::kSurfaceNear ? "surface_near" : "centered"; }

struct LesionStats {
  std::string patient;
  std::size_t id = 0;
  std::size_t voxel_count = 0;
  double volume_mm3 = 0.0;
  double surface_area_mm2 = 0.0;
  double sphericity = 0.0;
  double surface_distance_mm = 0.0;
  ShapeClass shape = ShapeClass::kIrregular;
  SizeClass size = SizeClass::kBelow1;
  LocationClass location = LocationClass::kCentered;
  double dice = 0.0;
  std::optional<std::size_t> matched_component;
};

inline LesionStats describe_lesion(const Component& c, const LiverSurfaceField& field, const Spacing& s) {
  LesionStats st;
  st.voxel_count = c.voxels.size();
  const ShapeMeasure sm = measure_shape(c, s);
  st.volume_mm3 = sm.volume_mm3;
  st.surface_area_mm2 = sm.area_mm2;
  st.sphericity = sm.sphericity;
  st.surface_distance_mm = field.distance(c);
  st.shape = shape_class(st.sphericity);
  st.size = size_class(st.volume_mm3);
  st.location = location_class(st.surface_distance_mm);
  return st;
}

// For each reference lesion, the predicted component with the largest voxel
// overlap (lowest index on ties), or nothing when no predicted voxel overlaps.
inline std::vector<std::optional<std::size_t>> match_lesions(const std::vector<Component>& ref,
                                                             const std::vector<Component>& pred, const Dims& dims) {
  std::vector<std::int32_t> owner(dims.count(), -1);
  for (std::size_t j = 0; j < pred.size(); ++j)
    for (const auto& v : pred[j].voxels)
      owner[(static_cast<std::size_t>(v.z) * dims.ny + static_cast<std::size_t>(v.y)) * dims.nx +
            static_cast<std::size_t>(v.x)] = static_cast<std::int32_t>(j);
  std::vector<std::optional<std::size_t>> out(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    std::vector<std::size_t> overlap(pred.size(), 0);
    for (const auto& v : ref[i].voxels) {
      const std::int32_t o = owner[(static_cast<std::size_t>(v.z) * dims.ny + static_cast<std::size_t>(v.y)) * dims.nx +
                                   static_cast<std::size_t>(v.x)];
      if (o >= 0) ++overlap[static_cast<std::size_t>(o)];
    }
    std::size_t best = 0;
    for (std::size_t j = 0; j < pred.size(); ++j)
      if (overlap[j] > best) {
        best = overlap[j];
        out[i] = j;
      }
  }
  return out;
}

// Per-lesion statistics of the reference mask with Dice against the matched
// predicted lesion component (0 when unmatched).
inline std::vector<LesionStats> analyze_lesions(const VoxelMask& pred, const VoxelMask& ref, const std::string& patient = "") {
  check_same_dims(pred, ref, "analyze_lesions");
  const auto ref_lesions = connected_components(lesion_region(ref));
  if (ref_lesions.empty()) return {};
  const auto pred_lesions = connected_components(lesion_region(pred));
  const LiverSurfaceField field(liver_region(ref));
  const auto match = match_lesions(ref_lesions, pred_lesions, ref.dims);
  std::vector<LesionStats> out;
  for (std::size_t i = 0; i < ref_lesions.size(); ++i) {
    LesionStats st = describe_lesion(ref_lesions[i], field, ref.spacing);
    st.patient = patient;
    st.id = i;
    st.matched_component = match[i];
    if (match[i]) {
      st.dice = dice(component_mask(ref_lesions[i], ref.dims, ref.spacing),
                     component_mask(pred_lesions[*match[i]], ref.dims, ref.spacing));
    }
    out.push_back(st);
  }
  return out;
}

struct Stratum {
  std::string axis;
  std::string name;
  MeanStd dice;
};

inline std::vector<Stratum> stratify(const std::vector<LesionStats>& stats, const std::vector<double>& dices) {
  require(stats.size() == dices.size(), ErrorCode::kDimension, "stratify: lesion and Dice lists differ in length");
  std::vector<Stratum> out;
  auto add_axis = [&](const char* axis, const auto& classes, auto classify) {
    for (const auto& c : classes) {
      std::vector<double> v;
      for (std::size_t i = 0; i < stats.size(); ++i)
        if (classify(stats[i]) == c) v.push_back(dices[i]);
      out.push_back({axis, to_string(c), mean_std(v)});
    }
  };
  add_axis("shape", std::array{ShapeClass::kSpherical, ShapeClass::kIrregular}, [](const LesionStats& s) { return s.shape; });
  add_axis("size", std::array{SizeClass::kBelow1, SizeClass::k1To5, SizeClass::k5To10, SizeClass::kAbove10},
           [](const LesionStats& s) { return s.size; });
  add_axis("location", std::array{LocationClass::kSurfaceNear, LocationClass::kCentered},
           [](const LesionStats& s) { return s.location; });
  return out;
}

inline std::vector<Stratum> stratify(const std::vector<LesionStats>& stats) {
  std::vector<double> d;
  for (const auto& s : stats) d.push_back(s.dice);
  return stratify(stats, d);
}

inline const Stratum* find_stratum(const std::vector<Stratum>& s, const std::string& axis, const std::string& name) {
  for (const auto& x : s)
    if (x.axis == axis && x.name == name) return &x;
  return nullptr;
}

inline std::string strata_tsv(const std::vector<Stratum>& strata) {
  std::string out = "axis\tclass\tn\tdice_mean\tdice_std\n";
  for (const auto& s : strata)
    out += s.axis + "\t" + s.name + "\t" + std::to_string(s.dice.n) + "\t" +
           (s.dice.n ? fmt_num(s.dice.mean) : std::string("nan")) + "\t" +
           (s.dice.n ? fmt_num(s.dice.std) : std::string("nan")) + "\n";
  return out;
}

inline std::string lesion_table_tsv(const std::vector<LesionStats>& stats) {
  std::string out =
      "patient\tlesion\tvoxels\tvolume_mm3\tarea_mm2\tsphericity\tsurface_distance_mm\tshape\tsize\tlocation\tdice\n";
  for (const auto& s : stats)
    out += s.patient + "\t" + std::to_string(s.id) + "\t" + std::to_string(s.voxel_count) + "\t" +
           fmt_num(s.volume_mm3, 2) + "\t" + fmt_num(s.surface_area_mm2, 2) + "\t" + fmt_num(s.sphericity) + "\t" +
           fmt_num(s.surface_distance_mm, 2) + "\t" + to_string(s.shape) + "\t" + to_string(s.size) + "\t" +
           to_string(s.location) + "\t" + fmt_num(s.dice) + "\n";
  return out;
}

}  // namespace swtr
