#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "swtr/lesion.hpp"
#include "swtr/phantom.hpp"
#include "test_util.hpp"

using namespace swtr;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// Component whose voxel centroid lies closest to the given point (mm).
std::size_t nearest_component(const std::vector<Component>& comps, const std::array<double, 3>& c, const Spacing& s) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < comps.size(); ++k) {
    double m[3] = {0, 0, 0};
    for (const auto& v : comps[k].voxels) {
      m[0] += (v.x + 0.5) * s.x;
      m[1] += (v.y + 0.5) * s.y;
      m[2] += (v.z + 0.5) * s.z;
    }
    const double n = static_cast<double>(comps[k].voxels.size());
    const double d = std::hypot(m[0] / n - c[0], m[1] / n - c[1], m[2] / n - c[2]);
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

TEST(Phantom, SameSeedIsBitIdentical) {
  const auto spec = toy_phantom_spec();
  const auto a = generate_phantom(spec), b = generate_phantom(spec);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.mask.data, b.mask.data);
  PhantomSpec other = spec;
  other.seed = 2;
  EXPECT_NE(generate_phantom(other).mask.data, a.mask.data);
}

TEST(Phantom, LesionsLieInsideTheLiverAndLabelsAreValid) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    PhantomSpec spec = toy_phantom_spec();
    spec.seed = seed;
    const auto ph = generate_phantom(spec);
    ph.mask.validate_labels();
    const VoxelMask liver = liver_region(ph.mask);
    for (std::size_t i = 0; i < ph.mask.data.size(); ++i) {
      if (ph.mask.data[i] == label::kLesion) {
        ASSERT_EQ(liver.data[i], 1);
      }
    }
    EXPECT_EQ(connected_components(lesion_region(ph.mask)).size(), ph.lesions.size());
    EXPECT_GE(ph.lesions.size(), spec.lesions_min);
    EXPECT_LE(ph.lesions.size(), spec.lesions_max);
  }
}

TEST(Phantom, FiveLesionsWithRadiiInRange) {
  PhantomSpec spec;
  spec.dims = {128, 128, 64};
  spec.spacing = {1.0, 1.0, 1.0};
  spec.lesions_min = spec.lesions_max = 5;
  spec.lesion_radius_min = 4.0;
  spec.lesion_radius_max = 10.0;
  spec.lobulated_fraction = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    spec.seed = seed;
    const auto ph = generate_phantom(spec);
    const auto comps = connected_components(lesion_region(ph.mask));
    ASSERT_EQ(comps.size(), 5u);
    for (const auto& c : comps) {
      int lo[3] = {1 << 30, 1 << 30, 1 << 30}, hi[3] = {-1, -1, -1};
      for (const auto& v : c.voxels) {
        const int p[3] = {v.x, v.y, v.z};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a]);
        }
      }
      for (int a = 0; a < 3; ++a) {
        const double r = 0.5 * (hi[a] - lo[a] + 1);
        EXPECT_GE(r, 4.0 - 1.0);
        EXPECT_LE(r, 10.0 + 1.0);
      }
    }
  }
}

TEST(Phantom, ContrastToNoiseAboveFloor) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PhantomSpec spec = toy_phantom_spec();
    spec.seed = seed;
    const auto ph = generate_phantom(spec);
    EXPECT_GE(lesion_cnr(ph.image, ph.mask), spec.cnr_floor);
  }
}

TEST(Phantom, SphericitySpectrumSpansBothClasses) {
  std::vector<double> spherical, lobulated;
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    PhantomSpec spec = toy_phantom_spec();
    spec.seed = seed;
    const auto ph = generate_phantom(spec);
    const auto comps = connected_components(lesion_region(ph.mask));
    for (const auto& les : ph.lesions) {
      const double psi = sphericity(comps[nearest_component(comps, les.center_mm, ph.mask.spacing)], ph.mask.spacing);
      (les.lobulated ? lobulated : spherical).push_back(psi);
    }
  }
  ASSERT_GE(spherical.size(), 5u);
  ASSERT_GE(lobulated.size(), 5u);
  EXPECT_GT(median(spherical), kSphericalThreshold);
  EXPECT_LT(median(lobulated), kSphericalThreshold);
  const auto above = std::count_if(spherical.begin(), spherical.end(), [](double p) { return p > kSphericalThreshold; });
  const auto below = std::count_if(lobulated.begin(), lobulated.end(), [](double p) { return p < kSphericalThreshold; });
  EXPECT_GE(static_cast<double>(above) / spherical.size(), 0.9);
  EXPECT_GE(static_cast<double>(below) / lobulated.size(), 0.7);
}

TEST(Phantom, InfeasiblePlacementIsReported) {
  PhantomSpec spec = toy_phantom_spec();
  spec.lesions_min = spec.lesions_max = 3;
  spec.lesion_radius_min = spec.lesion_radius_max = 60.0;
  spec.max_placement_attempts = 20;
  try {
    generate_phantom(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPlacement);
    EXPECT_NE(std::string(e.what()).find("could not place"), std::string::npos);
  }
}

TEST(Phantom, InvalidSpecIsConfigError) {
  PhantomSpec spec = toy_phantom_spec();
  spec.lesion = spec.liver;
  EXPECT_THROW(spec.validate(), Error);
  spec = toy_phantom_spec();
  spec.modality = "PET";
  EXPECT_THROW(generate_phantom(spec), Error);
}

TEST(Phantom, CtFlavourUsesHounsfieldRange) {
  PhantomSpec spec = ct_phantom_spec();
  const PhantomSpec toy = toy_phantom_spec();
  spec.dims = toy.dims;
  spec.spacing = toy.spacing;
  spec.liver_semi_axes = toy.liver_semi_axes;
  const auto ph = generate_phantom(spec);
  EXPECT_EQ(ph.image.modality, Modality::kCT);
  const auto [mn, mx] = std::minmax_element(ph.image.data.begin(), ph.image.data.end());
  EXPECT_LT(*mn, -900.0f);
  EXPECT_GT(*mx, 80.0f);
}

TEST(Cohort, PatientIndependentOfCohortSize) {
  const auto spec = toy_phantom_spec();
  const auto cohort = generate_cohort(6, spec);
  const auto alone = generate_patient(spec, 4);
  EXPECT_EQ(alone.id, "P004");
  EXPECT_EQ(alone.image.data, cohort[4].image.data);
  EXPECT_EQ(alone.mask.data, cohort[4].mask.data);
  EXPECT_NE(cohort[3].mask.data, cohort[4].mask.data);
}

TEST(Cohort, WriteReadRoundtripAndChecksum) {
  const auto cohort = generate_cohort(3, toy_phantom_spec());
  const std::string dir = swtr::testing::temp_dir("cohort_io");
  write_cohort(cohort, dir);
  const auto back = read_cohort(dir);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].id, cohort[i].id);
    EXPECT_EQ(back[i].image.data, cohort[i].image.data);
    EXPECT_EQ(back[i].mask.data, cohort[i].mask.data);
    EXPECT_EQ(back[i].image.spacing, cohort[i].image.spacing);
  }
  // Corrupt one mask payload byte.
  std::string bytes = detail::read_file(dir + "/P001.msk");
  bytes.back() = static_cast<char>(bytes.back() == 0 ? 1 : 0);
  detail::write_file(dir + "/P001.msk", bytes);
  try {
    read_cohort(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kChecksum);
  }
}
