#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "swtr/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace swtr;
using namespace swtr::oracle;

namespace {

VoxelMask binary_from(Dims d, const std::vector<std::array<int, 3>>& pts, Spacing s = {1, 1, 1}) {
  VoxelMask m(d, s);
  for (const auto& p : pts) m.at(p[0], p[1], p[2]) = 1;
  return m;
}

VoxelMask random_binary(Dims d, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution b(p);
  VoxelMask m(d, {1, 1, 1});
  for (auto& v : m.data) v = b(rng) ? 1 : 0;
  return m;
}

}  // namespace

TEST(Dice, Examples) {
  const Dims d{4, 4, 1};
  auto x = binary_from(d, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
  auto y = binary_from(d, {{2, 0, 0}, {3, 0, 0}, {0, 1, 0}, {1, 1, 0}});
  auto z = binary_from(d, {{0, 3, 0}});
  EXPECT_EQ(dice(x, x), 1.0);
  EXPECT_EQ(dice(x, z), 0.0);
  EXPECT_EQ(dice(x, y), 0.5);
  EXPECT_EQ(dice(VoxelMask(d, {1, 1, 1}), VoxelMask(d, {1, 1, 1})), 1.0);
}

TEST(Dice, DimensionMismatch) {
  try {
    dice(VoxelMask({2, 2, 2}, {1, 1, 1}), VoxelMask({2, 2, 3}, {1, 1, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimension);
  }
}

TEST(Hausdorff, Examples) {
  const Dims d{8, 8, 1};
  auto x = binary_from(d, {{0, 0, 0}});
  auto y = binary_from(d, {{3, 4, 0}});
  EXPECT_EQ(hausdorff(x, y, {1, 1, 1}), 5.0);
  EXPECT_EQ(hausdorff(x, x, {1, 1, 1}), 0.0);
  EXPECT_THROW(hausdorff(x, VoxelMask(d, {1, 1, 1}), {1, 1, 1}), Error);
}

TEST(Hausdorff, NestedMasksHaveZeroDirectedDistance) {
  VoxelMask big({9, 9, 9}, {1, 1, 1});
  VoxelMask small({9, 9, 9}, {1, 1, 1});
  for (int z = 1; z < 8; ++z)
    for (int y = 1; y < 8; ++y)
      for (int x = 1; x < 8; ++x) {
        big.at(x, y, z) = 1;
        if (x >= 3 && x <= 5 && y >= 3 && y <= 5 && z >= 3 && z <= 5) small.at(x, y, z) = 1;
      }
  // Directed distance of the inner set's voxels to the outer region is 0; on
  // boundaries the same holds for a set contained in the other's boundary.
  const auto bs = boundary_voxels(small);
  const auto bb = boundary_voxels(big);
  std::vector<VoxelCoord> big_all;
  for (int z = 0; z < 9; ++z)
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 9; ++x)
        if (big.at(x, y, z)) big_all.push_back({x, y, z});
  EXPECT_EQ(directed_hausdorff(bs, big_all, {1, 1, 1}), 0.0);
  EXPECT_EQ(directed_hausdorff(bb, bb, {1, 1, 1}), 0.0);
  EXPECT_GE(hausdorff(big, small, {1, 1, 1}), directed_hausdorff(bs, bb, {1, 1, 1}));
}

TEST(FalsePositiveRate, Examples) {
  VoxelMask ref({4, 1, 1}, {1, 1, 1});
  VoxelMask pred = ref;
  EXPECT_EQ(false_positive_rate(pred, ref), 0.0);
  std::fill(pred.data.begin(), pred.data.end(), label::kLesion);
  EXPECT_EQ(false_positive_rate(pred, ref), 1.0);
  ref.data = {2, 2, 2, 0};
  EXPECT_EQ(false_positive_rate(pred, ref), 0.25);
}

TEST(MetricOracles, TwoHundredRandomPairsMatchExactly) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> ext(1, 8);
  std::uniform_real_distribution<double> p(0.05, 0.7);
  for (int pair = 0; pair < 200; ++pair) {
    const Dims d{ext(rng), ext(rng), ext(rng)};
    const Spacing s{0.5 + pair % 3, 1.0, 2.5};
    VoxelMask x = random_binary(d, rng, p(rng)), y = random_binary(d, rng, p(rng));
    x.spacing = y.spacing = s;
    EXPECT_EQ(dice(x, y), dice_oracle(x, y));
    EXPECT_EQ(dice(x, y), dice(y, x));
    if (!surface_oracle(x).empty() && !surface_oracle(y).empty()) {
      const double hd = hausdorff(x, y, s);
      EXPECT_EQ(hd, hausdorff_oracle(x, y, s)) << "pair " << pair;
      EXPECT_EQ(hd, hausdorff(y, x, s));
      EXPECT_EQ(hausdorff(x, y, {2 * s.x, 2 * s.y, 2 * s.z}), 2 * hd);
      EXPECT_EQ(hausdorff(x, y, {0.25 * s.x, 0.25 * s.y, 0.25 * s.z}), 0.25 * hd);
      EXPECT_NEAR(hausdorff(x, y, {3 * s.x, 3 * s.y, 3 * s.z}), 3 * hd, 1e-12 * (1 + hd));
    }
    VoxelMask lx = swtr::testing::random_mask(d, rng()), ly = swtr::testing::random_mask(d, rng());
    EXPECT_EQ(false_positive_rate(lx, ly), fp_oracle(lx, ly));
  }
}

TEST(Dice, InvariantUnderVoxelPermutation) {
  std::mt19937_64 rng(7);
  const Dims d{6, 5, 4};
  VoxelMask x = random_binary(d, rng, 0.4), y = random_binary(d, rng, 0.4);
  std::vector<std::size_t> perm(d.count());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  VoxelMask px(d, {1, 1, 1}), py(d, {1, 1, 1});
  for (std::size_t i = 0; i < perm.size(); ++i) {
    px.data[perm[i]] = x.data[i];
    py.data[perm[i]] = y.data[i];
  }
  EXPECT_EQ(dice(x, y), dice(px, py));
}

TEST(PatientReport, PerfectAndMissedLesions) {
  VoxelMask ref({6, 6, 6}, {1, 1, 1});
  for (int z = 1; z < 5; ++z)
    for (int y = 1; y < 5; ++y)
      for (int x = 1; x < 5; ++x) ref.at(x, y, z) = (x == 2 && y == 2 && z == 2) ? 2 : 1;
  auto r = patient_report(ref, ref);
  EXPECT_EQ(r.dsc_liver, 1.0);
  EXPECT_EQ(r.dsc_lesion, 1.0);
  EXPECT_EQ(*r.hd_liver, 0.0);
  EXPECT_EQ(*r.hd_lesion, 0.0);
  EXPECT_EQ(r.fp_rate, 0.0);
  VoxelMask pred = ref;
  for (auto& v : pred.data)
    if (v == 2) v = 1;
  r = patient_report(pred, ref);
  EXPECT_EQ(r.dsc_liver, 1.0);
  EXPECT_EQ(r.dsc_lesion, 0.0);
  EXPECT_FALSE(r.hd_lesion.has_value());
}

TEST(PatientReport, HandBuilt4CubedCase) {
  VoxelMask ref({4, 4, 4}, {1, 1, 2});
  VoxelMask pred({4, 4, 4}, {1, 1, 2});
  for (std::size_t i = 0; i < 64; ++i) {
    ref.data[i] = i < 32 ? 1 : 0;
    pred.data[i] = i >= 8 && i < 40 ? 1 : 0;
  }
  ref.data[5] = 2;
  ref.data[6] = 2;
  pred.data[6] = 2;
  pred.data[7] = 2;
  pred.data[20] = 2;
  const auto r = patient_report(pred, ref);
  EXPECT_EQ(r.dsc_liver, dice_oracle(liver_region(pred), liver_region(ref)));
  EXPECT_EQ(r.dsc_lesion, dice_oracle(lesion_region(pred), lesion_region(ref)));
  EXPECT_EQ(*r.hd_liver, hausdorff_oracle(liver_region(pred), liver_region(ref), ref.spacing));
  EXPECT_EQ(*r.hd_lesion, hausdorff_oracle(lesion_region(pred), lesion_region(ref), ref.spacing));
  EXPECT_EQ(r.fp_rate, 2.0 / 3.0);
  EXPECT_NEAR(r.dsc_lesion, 2.0 * 1 / 5, 1e-15);
}

TEST(Summary, SampleStandardDeviation) {
  const auto m = mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.std, std::sqrt(5.0 / 3.0));
  EXPECT_EQ(mean_std({}).n, 0u);
  EXPECT_EQ(fmt_mean_std(mean_std({0.5, 0.7})), "0.60 ± 0.14");
}
