#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "swtr/nn.hpp"
#include "swtr/volume.hpp"

namespace swtr {

struct AugmentSpec {
  double flip_overall_p = 0.6;
  double flip_per_axis_p = 0.5;
  double rotation_deg = 20.0;  // in-plane, uniform in [-r, r]
  std::vector<std::size_t> translation_vox = {32, 32, 16};
  double gamma_p = 0.5;
  double gamma_min = 0.7, gamma_max = 1.5;
  double noise_p = 0.5;
  double noise_sigma_min = 0.0, noise_sigma_max = 0.05;
  std::size_t copies = 20;
  std::uint64_t seed = 1;

  template <typename V>
  void visit(V& v) {
    v("flip_overall_p", flip_overall_p);
    v("flip_per_axis_p", flip_per_axis_p);
    v("rotation_deg", rotation_deg);
    v("translation_vox", translation_vox);
    v("gamma_p", gamma_p);
    v("gamma_min", gamma_min);
    v("gamma_max", gamma_max);
    v("noise_p", noise_p);
    v("noise_sigma_min", noise_sigma_min);
    v("noise_sigma_max", noise_sigma_max);
    v("copies", copies);
    v("seed", seed);
  }

  void validate() const {
    auto prob = [](const char* name, double p) {
      if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::kConfig, std::string("augment.") + name + " must lie in [0,1]");
    };
    prob("flip_overall_p", flip_overall_p);
    prob("flip_per_axis_p", flip_per_axis_p);
    prob("gamma_p", gamma_p);
    prob("noise_p", noise_p);
    if (!(rotation_deg >= 0.0)) fail(ErrorCode::kConfig, "augment.rotation_deg must be non-negative");
    if (translation_vox.size() != 3) fail(ErrorCode::kConfig, "augment.translation_vox needs 3 entries");
    if (!(gamma_min > 0.0 && gamma_min <= gamma_max)) fail(ErrorCode::kConfig, "augment.gamma range must be ordered and positive");
    if (!(noise_sigma_min >= 0.0 && noise_sigma_min <= noise_sigma_max))
      fail(ErrorCode::kConfig, "augment.noise_sigma range must be ordered and non-negative");
    if (copies == 0) fail(ErrorCode::kConfig, "augment.copies must be at least 1");
  }
};

// Augmentation spec that leaves every sample unchanged.
inline AugmentSpec identity_augment_spec() {
  AugmentSpec s;
  s.flip_overall_p = 0.0;
  s.rotation_deg = 0.0;
  s.translation_vox = {0, 0, 0};
  s.gamma_p = 0.0;
  s.noise_p = 0.0;
  return s;
}

struct AugmentParams {
  bool flip_active = false;
  std::array<bool, 3> flip = {false, false, false};  // x, y, z
  double rotation_deg = 0.0;
  std::array<int, 3> translation = {0, 0, 0};
  double gamma = 1.0;  // 1 = not applied
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

inline AugmentParams sample_augment_params(const AugmentSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  AugmentParams p;
  p.flip_active = u01(rng) < spec.flip_overall_p;
  for (auto& f : p.flip) {
    const bool axis = u01(rng) < spec.flip_per_axis_p;
    f = p.flip_active && axis;
  }
  p.rotation_deg = spec.rotation_deg > 0.0
                       ? std::uniform_real_distribution<double>(-spec.rotation_deg, spec.rotation_deg)(rng)
                       : 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto t = static_cast<int>(spec.translation_vox[a]);
    p.translation[a] = std::uniform_int_distribution<int>(-t, t)(rng);
  }
  const bool gamma_on = u01(rng) < spec.gamma_p;
  const double gamma = std::uniform_real_distribution<double>(spec.gamma_min, spec.gamma_max)(rng);
  if (gamma_on) p.gamma = gamma;
  const bool noise_on = u01(rng) < spec.noise_p;
  const double sigma = std::uniform_real_distribution<double>(spec.noise_sigma_min, spec.noise_sigma_max)(rng);
  if (noise_on) p.noise_sigma = sigma;
  p.noise_seed = rng();
  return p;
}

namespace detail {

// Maps an output voxel to its source position. Forward geometry is flip,
// then in-plane rotation about the slice centre, then translation.
struct InverseWarp {
  Dims dims;
  AugmentParams p;
  double c, s, cx, cy;

  InverseWarp(const Dims& d, const AugmentParams& params) : dims(d), p(params) {
    const double th = params.rotation_deg * std::numbers::pi / 180.0;
    c = std::cos(th);
    s = std::sin(th);
    cx = 0.5 * static_cast<double>(d.nx - 1);
    cy = 0.5 * static_cast<double>(d.ny - 1);
  }

  std::array<double, 3> operator()(std::size_t x, std::size_t y, std::size_t z) const {
    const double qx = static_cast<double>(x) - p.translation[0] - cx;
    const double qy = static_cast<double>(y) - p.translation[1] - cy;
    double sx = c * qx + s * qy + cx;
    double sy = -s * qx + c * qy + cy;
    double sz = static_cast<double>(z) - p.translation[2];
    if (p.flip[0]) sx = static_cast<double>(dims.nx - 1) - sx;
    if (p.flip[1]) sy = static_cast<double>(dims.ny - 1) - sy;
    if (p.flip[2]) sz = static_cast<double>(dims.nz - 1) - sz;
    return {sx, sy, sz};
  }
};

}  // namespace detail

// Geometric warp of an image: bilinear in-plane, source slices must land on
// integer positions (translation along z is whole voxels). Outside -> 0.
inline VolumeImage warp_image(const VolumeImage& v, const AugmentParams& p) {
  VolumeImage out(v.dims, v.spacing, v.modality, 0.0f);
  const detail::InverseWarp warp(v.dims, p);
  auto sample = [&](std::int64_t x, std::int64_t y, std::int64_t z) -> double {
    return v.contains(x, y, z) ? v.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) : 0.0;
  };
  for (std::size_t z = 0; z < v.dims.nz; ++z)
    for (std::size_t y = 0; y < v.dims.ny; ++y)
      for (std::size_t x = 0; x < v.dims.nx; ++x) {
        const auto [sx, sy, sz] = warp(x, y, z);
        const auto iz = static_cast<std::int64_t>(std::lround(sz));
        const double fx = std::floor(sx), fy = std::floor(sy);
        const double wx = sx - fx, wy = sy - fy;
        const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
        const double top = (1 - wx) * sample(x0, y0, iz) + wx * sample(x0 + 1, y0, iz);
        const double bot = (1 - wx) * sample(x0, y0 + 1, iz) + wx * sample(x0 + 1, y0 + 1, iz);
        out.at(x, y, z) = static_cast<float>((1 - wy) * top + wy * bot);
      }
  return out;
}

// Same geometry with nearest-neighbour lookup; outside -> label 0.
inline VoxelMask warp_mask(const VoxelMask& m, const AugmentParams& p) {
  VoxelMask out(m.dims, m.spacing);
  const detail::InverseWarp warp(m.dims, p);
  for (std::size_t z = 0; z < m.dims.nz; ++z)
    for (std::size_t y = 0; y < m.dims.ny; ++y)
      for (std::size_t x = 0; x < m.dims.nx; ++x) {
        const auto [sx, sy, sz] = warp(x, y, z);
        const auto ix = static_cast<std::int64_t>(std::lround(sx)), iy = static_cast<std::int64_t>(std::lround(sy)),
                   iz = static_cast<std::int64_t>(std::lround(sz));
        if (m.contains(ix, iy, iz))
          out.at(x, y, z) = m.at(static_cast<std::size_t>(ix), static_cast<std::size_t>(iy), static_cast<std::size_t>(iz));
      }
  return out;
}

// Gamma on the min-max normalized intensities, mapped back to the original range.
inline void apply_gamma(VolumeImage& v, double gamma) {
  if (gamma == 1.0 || v.data.empty()) return;
  const auto [mn, mx] = std::minmax_element(v.data.begin(), v.data.end());
  const double lo = *mn, hi = *mx;
  if (!(hi > lo)) return;
  for (auto& x : v.data) x = static_cast<float>(lo + (hi - lo) * std::pow((x - lo) / (hi - lo), gamma));
}

inline void apply_noise(VolumeImage& v, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return;
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& x : v.data) x = static_cast<float>(x + n(rng));
}

inline std::pair<VolumeImage, VoxelMask> apply_augment(const VolumeImage& v, const VoxelMask& m, const AugmentParams& p) {
  if (v.dims != m.dims) fail(ErrorCode::kDimension, "augment: image and mask dims differ");
  VolumeImage img = warp_image(v, p);
  apply_gamma(img, p.gamma);
  apply_noise(img, p.noise_sigma, p.noise_seed);
  return {std::move(img), warp_mask(m, p)};
}

// Affine (image bilinear, mask nearest), then gamma, then noise, with
// parameters drawn from `spec`.
inline std::pair<VolumeImage, VoxelMask> augment_volume(const VolumeImage& v, const VoxelMask& m, const AugmentSpec& spec,
                                                        Rng& rng) {
  return apply_augment(v, m, sample_augment_params(spec, rng));
}

// ---------------------------------------------------------------------------
// Offline augmented dataset

struct Case {
  std::string id;
  VolumeImage image;
  VoxelMask mask;
};

struct SliceRef {
  std::size_t patient = 0;  // index into the source case list
  std::size_t copy = 0;
  std::size_t slice = 0;
};

inline std::uint64_t copy_seed(std::uint64_t master, const std::string& patient_id, std::size_t copy) {
  return derive_seed(master, fnv1a64(patient_id.data(), patient_id.size()), copy);
}

// Every axial slice of `copies` augmented copies per volume, given each
// volume's slice count.
inline std::vector<SliceRef> build_slice_index(const std::vector<std::size_t>& slices_per_volume, std::size_t copies) {
  std::vector<SliceRef> idx;
  std::size_t total = 0;
  for (auto n : slices_per_volume) total += n;
  idx.reserve(total * copies);
  for (std::size_t p = 0; p < slices_per_volume.size(); ++p)
    for (std::size_t c = 0; c < copies; ++c)
      for (std::size_t s = 0; s < slices_per_volume[p]; ++s) idx.push_back({p, c, s});
  return idx;
}

// copies x |cases| augmented volumes, produced on demand. Each (patient,
// copy) pair draws from its own stream derived from the patient id, so a
// sample does not depend on which other cases are present or on access order.
class AugmentedDataset {
 public:
  AugmentedDataset(const std::vector<Case>* cases, AugmentSpec spec) : cases_(cases), spec_(std::move(spec)) {
    require(cases_ && !cases_->empty(), ErrorCode::kDegenerateInput, "augment_dataset: no input volumes");
    spec_.validate();
    std::vector<std::size_t> nz;
    for (const auto& c : *cases_) {
      if (c.image.dims != c.mask.dims) fail(ErrorCode::kDimension, "augment_dataset: case '" + c.id + "' image/mask dims differ");
      nz.push_back(c.image.dims.nz);
    }
    index_ = build_slice_index(nz, spec_.copies);
  }

  std::size_t volume_count() const { return cases_->size() * spec_.copies; }
  const std::vector<SliceRef>& slice_index() const { return index_; }
  const AugmentSpec& spec() const { return spec_; }
  const Case& source(std::size_t patient) const { return (*cases_)[patient]; }

  AugmentParams params(std::size_t patient, std::size_t copy) const {
    Rng rng(copy_seed(spec_.seed, (*cases_)[patient].id, copy));
    return sample_augment_params(spec_, rng);
  }

  std::pair<VolumeImage, VoxelMask> sample(std::size_t patient, std::size_t copy) const {
    require(patient < cases_->size() && copy < spec_.copies, ErrorCode::kContract, "augmented sample out of range");
    const Case& c = (*cases_)[patient];
    return apply_augment(c.image, c.mask, params(patient, copy));
  }

  // FNV-1a over every augmented volume and mask in (patient, copy) order.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t p = 0; p < cases_->size(); ++p)
      for (std::size_t c = 0; c < spec_.copies; ++c) {
        const auto [img, msk] = sample(p, c);
        h = fnv1a64(img.data.data(), img.data.size() * sizeof(float), h);
        h = fnv1a64(msk.data.data(), msk.data.size(), h);
      }
    return h;
  }

 private:
  const std::vector<Case>* cases_;
  AugmentSpec spec_;
  std::vector<SliceRef> index_;
};

inline AugmentedDataset augment_dataset(const std::vector<Case>& cases, const AugmentSpec& spec) {
  return AugmentedDataset(&cases, spec);
}

// Writes every augmented sample as <id>_c<copy>.vol / .msk plus manifest.tsv
// (patient, copy, slices, files).
inline void write_augmented(const AugmentedDataset& ds, const std::string& dir) {
  std::string manifest = "patient\tcopy\tslices\timage\tmask\n";
  for (std::size_t p = 0; p < ds.volume_count() / ds.spec().copies; ++p)
    for (std::size_t c = 0; c < ds.spec().copies; ++c) {
      const auto [img, msk] = ds.sample(p, c);
      const std::string stem = ds.source(p).id + "_c" + std::to_string(c);
      write_volume(dir + "/" + stem + ".vol", img);
      write_mask(dir + "/" + stem + ".msk", msk);
      manifest += ds.source(p).id + "\t" + std::to_string(c) + "\t" + std::to_string(img.dims.nz) + "\t" + stem +
                  ".vol\t" + stem + ".msk\n";
    }
  detail::write_file(dir + "/manifest.tsv", manifest);
}

}  // namespace swtr
