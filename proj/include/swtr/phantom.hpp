#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "swtr/augment.hpp"
#include "swtr/nn.hpp"
#include "swtr/volume.hpp"

namespace swtr {

struct PhantomSpec {
  std::vector<std::size_t> dims = {224, 224, 32};
  std::vector<double> spacing = {1.0, 1.0, 3.0};  // mm
  std::string modality = "MR";
  // Liver ellipsoid: semi-axes and centre offset as fractions of the field of view.
  std::vector<double> liver_semi_axes = {0.30, 0.24, 0.40};
  std::vector<double> liver_center = {-0.06, 0.02, 0.0};
  double liver_jitter = 0.08;      // relative random variation of the semi-axes per patient
  double surface_amplitude = 0.08; // relative radial perturbation of the liver surface
  std::size_t lesions_min = 2;
  std::size_t lesions_max = 5;
  double lesion_radius_min = 4.0;  // mm
  double lesion_radius_max = 16.0;
  double lobulated_fraction = 0.5;
  // Intensity model.
  double background = 0.15;
  double body = 0.35;
  double liver = 0.65;
  double lesion = 0.35;
  double modulation = 0.05;  // amplitude of the smooth multiplicative field
  double noise_sigma = 0.04;
  double cnr_floor = 3.0;
  std::size_t max_placement_attempts = 400;
  std::uint64_t seed = 1;

  template <typename V>
  void visit(V& v) {
    v("dims", dims);
    v("spacing", spacing);
    v("modality", modality);
    v("liver_semi_axes", liver_semi_axes);
    v("liver_center", liver_center);
    v("liver_jitter", liver_jitter);
    v("surface_amplitude", surface_amplitude);
    v("lesions_min", lesions_min);
    v("lesions_max", lesions_max);
    v("lesion_radius_min", lesion_radius_min);
    v("lesion_radius_max", lesion_radius_max);
    v("lobulated_fraction", lobulated_fraction);
    v("background", background);
    v("body", body);
    v("liver", liver);
    v("lesion", lesion);
    v("modulation", modulation);
    v("noise_sigma", noise_sigma);
    v("cnr_floor", cnr_floor);
    v("max_placement_attempts", max_placement_attempts);
    v("seed", seed);
  }

  Dims grid() const { return {dims[0], dims[1], dims[2]}; }
  Spacing voxel() const { return {spacing[0], spacing[1], spacing[2]}; }

  void validate() const {
    auto bad = [](const std::string& f, const std::string& m) { fail(ErrorCode::kConfig, "phantom." + f + ": " + m); };
    if (dims.size() != 3 || dims[0] < 8 || dims[1] < 8 || dims[2] < 1) bad("dims", "need 3 extents, in-plane at least 8");
    if (spacing.size() != 3 || !(spacing[0] > 0 && spacing[1] > 0 && spacing[2] > 0)) bad("spacing", "need 3 positive values");
    if (modality != "MR" && modality != "CT") bad("modality", "must be MR or CT");
    if (liver_semi_axes.size() != 3 || liver_center.size() != 3) bad("liver_semi_axes", "need 3 values (and 3 for liver_center)");
    for (double a : liver_semi_axes)
      if (!(a > 0.0 && a <= 0.5)) bad("liver_semi_axes", "fractions must lie in (0, 0.5]");
    if (lesions_min > lesions_max) bad("lesions_min", "exceeds lesions_max");
    if (!(lesion_radius_min > 0.0 && lesion_radius_min <= lesion_radius_max)) bad("lesion_radius_min", "radius range must be ordered and positive");
    if (!(lobulated_fraction >= 0.0 && lobulated_fraction <= 1.0)) bad("lobulated_fraction", "must lie in [0,1]");
    if (lesion == liver) bad("lesion", "lesion/liver contrast must be nonzero");
    if (!(noise_sigma >= 0.0)) bad("noise_sigma", "must be non-negative");
  }
};

// Desk-scale phantom used by the tests and the phantom experiments.
inline PhantomSpec toy_phantom_spec() {
  PhantomSpec s;
  s.dims = {64, 64, 16};
  s.spacing = {3.5, 3.5, 5.0};
  s.liver_semi_axes = {0.30, 0.24, 0.42};
  return s;
}

// CT flavour: intensities in Hounsfield units.
inline PhantomSpec ct_phantom_spec() {
  PhantomSpec s;
  s.modality = "CT";
  s.background = -1000.0;
  s.body = 20.0;
  s.liver = 110.0;
  s.lesion = 40.0;
  s.noise_sigma = 12.0;
  return s;
}

struct PhantomLesion {
  bool lobulated = false;
  double radius_mm = 0.0;  // base radius
  std::array<double, 3> center_mm{};
};

struct Phantom {
  VolumeImage image;
  VoxelMask mask;
  std::vector<PhantomLesion> lesions;
};

namespace detail {

struct Ellipsoid {
  std::array<double, 3> c;  // mm
  std::array<double, 3> r;  // mm
  double q(double x, double y, double z) const {
    const double a = (x - c[0]) / r[0], b = (y - c[1]) / r[1], d = (z - c[2]) / r[2];
    return a * a + b * b + d * d;
  }
};

// Low-order radial perturbation of a unit direction.
struct SurfaceWave {
  std::array<double, 4> amp{}, fx{}, fy{}, fz{}, phase{};
  double eval(double ux, double uy, double uz) const {
    double s = 0.0;
    for (std::size_t k = 0; k < amp.size(); ++k) s += amp[k] * std::sin(fx[k] * ux + fy[k] * uy + fz[k] * uz + phase[k]);
    return s;
  }
};

inline std::array<double, 3> voxel_center_mm(std::size_t x, std::size_t y, std::size_t z, const Spacing& s) {
  return {(static_cast<double>(x) + 0.5) * s.x, (static_cast<double>(y) + 0.5) * s.y, (static_cast<double>(z) + 0.5) * s.z};
}

// Whether a set of voxel indices forms one 26-connected component.
inline bool connected26(std::vector<std::size_t> vox, const Dims& d) {
  std::sort(vox.begin(), vox.end());
  std::vector<std::uint8_t> seen(vox.size(), 0);
  std::vector<std::size_t> stack = {0};
  seen[0] = 1;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const std::size_t i = vox[stack.back()];
    stack.pop_back();
    const auto x = static_cast<std::int64_t>(i % d.nx), y = static_cast<std::int64_t>((i / d.nx) % d.ny),
               z = static_cast<std::int64_t>(i / (d.nx * d.ny));
    for (std::int64_t dz = -1; dz <= 1; ++dz)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          const std::int64_t qx = x + dx, qy = y + dy, qz = z + dz;
          if (qx < 0 || qy < 0 || qz < 0 || qx >= static_cast<std::int64_t>(d.nx) || qy >= static_cast<std::int64_t>(d.ny) ||
              qz >= static_cast<std::int64_t>(d.nz))
            continue;
          const auto q = static_cast<std::size_t>((qz * static_cast<std::int64_t>(d.ny) + qy) * static_cast<std::int64_t>(d.nx) + qx);
          const auto it = std::lower_bound(vox.begin(), vox.end(), q);
          if (it == vox.end() || *it != q) continue;
          const auto k = static_cast<std::size_t>(it - vox.begin());
          if (!seen[k]) {
            seen[k] = 1;
            ++reached;
            stack.push_back(k);
          }
        }
  }
  return reached == vox.size();
}

}  // namespace detail

// Liver = perturbed ellipsoid, lesions = balls or unions of 2-4 ellipsoids
// placed strictly inside the liver and one voxel apart from each other.
inline Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
  const Dims dims = spec.grid();
  const Spacing sp = spec.voxel();
  const std::array<double, 3> fov = {static_cast<double>(dims.nx) * sp.x, static_cast<double>(dims.ny) * sp.y,
                                     static_cast<double>(dims.nz) * sp.z};

  detail::Ellipsoid liver;
  for (std::size_t a = 0; a < 3; ++a) {
    liver.r[a] = spec.liver_semi_axes[a] * fov[a] * (1.0 + spec.liver_jitter * uni(-1.0, 1.0));
    liver.c[a] = (0.5 + spec.liver_center[a] + 0.02 * uni(-1.0, 1.0)) * fov[a];
  }
  detail::SurfaceWave wave;
  for (std::size_t k = 0; k < 4; ++k) {
    wave.amp[k] = spec.surface_amplitude * uni(0.3, 1.0) / 2.0;
    wave.fx[k] = uni(-4.0, 4.0);
    wave.fy[k] = uni(-4.0, 4.0);
    wave.fz[k] = uni(-4.0, 4.0);
    wave.phase[k] = uni(0.0, 2.0 * std::numbers::pi);
  }
  const detail::Ellipsoid body{{0.5 * fov[0], 0.5 * fov[1], 0.5 * fov[2]}, {0.47 * fov[0], 0.40 * fov[1], 10.0 * fov[2]}};

  Phantom ph;
  ph.mask = VoxelMask(dims, sp);
  std::vector<std::uint8_t> in_body(dims.count(), 0);
  for (std::size_t z = 0; z < dims.nz; ++z)
    for (std::size_t y = 0; y < dims.ny; ++y)
      for (std::size_t x = 0; x < dims.nx; ++x) {
        const auto p = detail::voxel_center_mm(x, y, z, sp);
        const std::size_t i = ph.mask.index(x, y, z);
        in_body[i] = body.q(p[0], p[1], p[2]) <= 1.0;
        const double q = liver.q(p[0], p[1], p[2]);
        const double norm = std::sqrt(q);
        double ux = 0, uy = 0, uz = 0;
        if (norm > 0) {
          ux = (p[0] - liver.c[0]) / liver.r[0] / norm;
          uy = (p[1] - liver.c[1]) / liver.r[1] / norm;
          uz = (p[2] - liver.c[2]) / liver.r[2] / norm;
        }
        if (norm <= 1.0 + wave.eval(ux, uy, uz) && in_body[i]) ph.mask.data[i] = label::kLiver;
      }
  if (std::count(ph.mask.data.begin(), ph.mask.data.end(), label::kLiver) == 0)
    fail(ErrorCode::kDegenerateInput, "phantom: liver is empty for this geometry");

  // Lesions.
  const auto n_lesions = static_cast<std::size_t>(
      std::uniform_int_distribution<long long>(static_cast<long long>(spec.lesions_min), static_cast<long long>(spec.lesions_max))(rng));
  std::vector<std::uint8_t> blocked(dims.count(), 0);  // lesion voxels and their 26-neighbourhood
  for (std::size_t l = 0; l < n_lesions; ++l) {
    PhantomLesion les;
    les.lobulated = u01(rng) < spec.lobulated_fraction;
    les.radius_mm = uni(spec.lesion_radius_min, spec.lesion_radius_max);
    // Shape in lesion-local coordinates.
    std::vector<detail::Ellipsoid> parts;
    if (!les.lobulated) {
      parts.push_back({{0, 0, 0}, {les.radius_mm, les.radius_mm, les.radius_mm}});
    } else {
      // A small core plus 2-4 protruding lobes that each overlap it.
      const double core = les.radius_mm * 0.45;
      parts.push_back({{0, 0, 0}, {core, core, core}});
      const int lobes = std::uniform_int_distribution<int>(2, 4)(rng);
      for (int k = 0; k < lobes; ++k) {
        const double th = uni(0.0, 2.0 * std::numbers::pi), el = uni(-0.5, 0.5);
        const std::array<double, 3> dir = {std::cos(th) * std::cos(el), std::sin(th) * std::cos(el), std::sin(el)};
        const double off = les.radius_mm * uni(0.8, 1.0);
        const double along = les.radius_mm * uni(0.7, 0.9), across = les.radius_mm * uni(0.22, 0.3);
        // Elongated along the dominant axis of its direction.
        std::size_t major = 0;
        for (std::size_t a = 1; a < 3; ++a)
          if (std::abs(dir[a]) > std::abs(dir[major])) major = a;
        std::array<double, 3> r = {across, across, across};
        r[major] = along;
        parts.push_back({{off * dir[0], off * dir[1], off * dir[2]}, r});
      }
    }
    double ext = 0.0;
    for (const auto& e : parts)
      for (std::size_t a = 0; a < 3; ++a) ext = std::max(ext, std::abs(e.c[a]) + e.r[a]);

    bool placed = false;
    for (std::size_t attempt = 0; attempt < spec.max_placement_attempts && !placed; ++attempt) {
      std::array<double, 3> c;
      for (std::size_t a = 0; a < 3; ++a) c[a] = liver.c[a] + liver.r[a] * uni(-1.0, 1.0);
      std::vector<std::size_t> vox;
      bool ok = true;
      std::array<std::int64_t, 3> lo, hi;
      const double spa[3] = {sp.x, sp.y, sp.z};
      const std::size_t n[3] = {dims.nx, dims.ny, dims.nz};
      for (std::size_t a = 0; a < 3 && ok; ++a) {
        lo[a] = static_cast<std::int64_t>(std::floor((c[a] - ext) / spa[a] - 0.5));
        hi[a] = static_cast<std::int64_t>(std::ceil((c[a] + ext) / spa[a] - 0.5));
        if (lo[a] < 0 || hi[a] >= static_cast<std::int64_t>(n[a])) ok = false;
      }
      for (std::int64_t z = lo[2]; ok && z <= hi[2]; ++z)
        for (std::int64_t y = lo[1]; ok && y <= hi[1]; ++y)
          for (std::int64_t x = lo[0]; ok && x <= hi[0]; ++x) {
            const auto p = detail::voxel_center_mm(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z), sp);
            bool inside = false;
            for (const auto& e : parts) inside = inside || e.q(p[0] - c[0], p[1] - c[1], p[2] - c[2]) <= 1.0;
            if (!inside) continue;
            const std::size_t i = ph.mask.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z));
            if (ph.mask.data[i] != label::kLiver || blocked[i]) ok = false;
            vox.push_back(i);
          }
      if (!ok || vox.empty() || !detail::connected26(vox, dims)) continue;
      for (std::size_t i : vox) ph.mask.data[i] = label::kLesion;
      for (std::size_t i : vox) {
        const std::size_t x = i % dims.nx, y = (i / dims.nx) % dims.ny, z = i / (dims.nx * dims.ny);
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const std::int64_t qx = static_cast<std::int64_t>(x) + dx, qy = static_cast<std::int64_t>(y) + dy,
                                 qz = static_cast<std::int64_t>(z) + dz;
              if (ph.mask.contains(qx, qy, qz))
                blocked[ph.mask.index(static_cast<std::size_t>(qx), static_cast<std::size_t>(qy), static_cast<std::size_t>(qz))] = 1;
            }
      }
      les.center_mm = c;
      placed = true;
    }
    if (!placed)
      fail(ErrorCode::kPlacement, "phantom: could not place lesion " + std::to_string(l) + " (radius " +
                                      kv::format(les.radius_mm) + " mm) after " +
                                      std::to_string(spec.max_placement_attempts) + " attempts");
    ph.lesions.push_back(les);
  }

  // Intensities: class mean x smooth field + Gaussian noise.
  ph.image = VolumeImage(dims, sp, parse_modality(spec.modality));
  std::array<double, 3> kf, kp;
  for (std::size_t a = 0; a < 3; ++a) {
    kf[a] = uni(0.5, 1.5) * 2.0 * std::numbers::pi / fov[a];
    kp[a] = uni(0.0, 2.0 * std::numbers::pi);
  }
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  for (std::size_t z = 0; z < dims.nz; ++z)
    for (std::size_t y = 0; y < dims.ny; ++y)
      for (std::size_t x = 0; x < dims.nx; ++x) {
        const std::size_t i = ph.mask.index(x, y, z);
        const auto p = detail::voxel_center_mm(x, y, z, sp);
        double mean = spec.background;
        if (ph.mask.data[i] == label::kLesion) mean = spec.lesion;
        else if (ph.mask.data[i] == label::kLiver) mean = spec.liver;
        else if (in_body[i]) mean = spec.body;
        const double field = 1.0 + spec.modulation * (std::sin(kf[0] * p[0] + kp[0]) * std::sin(kf[1] * p[1] + kp[1]) +
                                                       0.5 * std::sin(kf[2] * p[2] + kp[2]));
        ph.image.data[i] = static_cast<float>(mean * field + (spec.noise_sigma > 0.0 ? noise(rng) : 0.0));
      }
  return ph;
}

// |mean(lesion) - mean(liver-only)| / std(liver-only), measured on the output.
inline double lesion_cnr(const VolumeImage& img, const VoxelMask& mask) {
  double sl = 0, sv = 0, sv2 = 0;
  std::size_t nl = 0, nv = 0;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] == label::kLesion) {
      sl += img.data[i];
      ++nl;
    } else if (mask.data[i] == label::kLiver) {
      sv += img.data[i];
      sv2 += static_cast<double>(img.data[i]) * img.data[i];
      ++nv;
    }
  }
  require(nl > 0 && nv > 1, ErrorCode::kDegenerateInput, "lesion_cnr: needs lesion and liver voxels");
  const double ml = sl / static_cast<double>(nl), mv = sv / static_cast<double>(nv);
  const double var = std::max(0.0, sv2 / static_cast<double>(nv) - mv * mv);
  return std::abs(ml - mv) / std::sqrt(var);
}

inline std::string phantom_id(std::size_t i) {
  std::string n = std::to_string(i);
  return "P" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
}

// Patient i of a cohort: its seed depends only on the master seed and i.
inline Case generate_patient(const PhantomSpec& spec, std::size_t i) {
  PhantomSpec s = spec;
  s.seed = derive_seed(spec.seed, 0x70686e74ULL, i);
  Phantom ph = generate_phantom(s);
  return {phantom_id(i), std::move(ph.image), std::move(ph.mask)};
}

inline std::vector<Case> generate_cohort(std::size_t n, const PhantomSpec& spec) {
  std::vector<Case> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_patient(spec, i));
  return out;
}

// FNV-1a over image and mask payloads, as 16 hex digits.
inline std::string cohort_checksum(const Case& c) {
  std::uint64_t h = fnv1a64(c.image.data.data(), c.image.data.size() * sizeof(float));
  h = fnv1a64(c.mask.data.data(), c.mask.data.size(), h);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

// <dir>/<id>.vol, <dir>/<id>.msk and <dir>/cohort.tsv.
inline void write_cohort(const std::vector<Case>& cohort, const std::string& dir) {
  std::string manifest = "patient\timage\tmask\tdims\tspacing\tmodality\tchecksum\n";
  for (const auto& c : cohort) {
    write_volume(dir + "/" + c.id + ".vol", c.image);
    write_mask(dir + "/" + c.id + ".msk", c.mask);
    manifest += c.id + "\t" + c.id + ".vol\t" + c.id + ".msk\t" + std::to_string(c.image.dims.nx) + "x" +
                std::to_string(c.image.dims.ny) + "x" + std::to_string(c.image.dims.nz) + "\t" +
                kv::format(c.image.spacing.x) + "," + kv::format(c.image.spacing.y) + "," + kv::format(c.image.spacing.z) +
                "\t" + modality_name(c.image.modality) + "\t" + cohort_checksum(c) + "\n";
  }
  detail::write_file(dir + "/cohort.tsv", manifest);
}

// Reads a cohort written by write_cohort.
inline std::vector<Case> read_cohort(const std::string& dir) {
  const std::string text = detail::read_file(dir + "/cohort.tsv");
  std::vector<Case> out;
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string field; std::getline(ls, field, '\t');) f.push_back(field);
    if (f.size() != 7) fail(ErrorCode::kFormat, dir + "/cohort.tsv: malformed row '" + line + "'");
    Case c{f[0], read_volume(dir + "/" + f[1]), read_mask(dir + "/" + f[2])};
    if (c.image.dims != c.mask.dims) fail(ErrorCode::kDimension, "case '" + f[0] + "': image and mask dims differ");
    if (cohort_checksum(c) != f[6]) fail(ErrorCode::kChecksum, dir + "/cohort.tsv: checksum mismatch for '" + f[0] + "'");
    out.push_back(std::move(c));
  }
  require(!out.empty(), ErrorCode::kFormat, dir + "/cohort.tsv lists no cases");
  return out;
}

}  // namespace swtr
