#include <gtest/gtest.h>

#include "swtr/run_config.hpp"
#include "test_util.hpp"

using namespace swtr;

TEST(KeyValueConfig, ParsesCommentsAndOverrides) {
  auto kv = KeyValueConfig::parse("# header\nmodel.d_model = 48  # inline\n\ntrain.lr=0.5\n");
  EXPECT_EQ(kv.get("model.d_model"), "48");
  EXPECT_EQ(kv.get("train.lr"), "0.5");
  kv.apply_override("train.lr=0.25");
  EXPECT_EQ(kv.get("train.lr"), "0.25");
  EXPECT_THROW(kv.apply_override("novalue"), Error);
  EXPECT_THROW(KeyValueConfig::parse("just text"), Error);
}

TEST(KeyValueConfig, MalformedValuesAreConfigErrors) {
  RunConfig rc;
  KeyValueConfig kv;
  kv.set("model.d_model", "abc");
  try {
    rc.apply(kv);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(RunConfig, UnknownKeysRejected) {
  RunConfig rc;
  KeyValueConfig kv;
  kv.set("model.dmodel", "12");
  try {
    rc.apply(kv);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("model.dmodel"), std::string::npos);
  }
}

TEST(RunConfig, SnapshotRoundtripsExactly) {
  RunConfig rc;
  rc.experiment.train.lr = 0.1 + 0.2;  // not exactly representable in short decimal
  rc.phantom.spacing = {0.7, 1.1, 3.3};
  rc.ablation.seeds = {4, 5};
  const std::string text = rc.to_kv().to_string();
  RunConfig back;
  back.apply(KeyValueConfig::parse(text));
  EXPECT_EQ(back.to_kv().to_string(), text);
  EXPECT_EQ(back.experiment.train.lr, rc.experiment.train.lr);
}

TEST(RunConfig, ResolutionOrderDefaultsFileOverridesSeed) {
  const std::string dir = swtr::testing::temp_dir("config_order");
  detail::write_file(dir + "/c.cfg", "train.epochs = 3\ntrain.lr = 0.01\n");
  const std::uint64_t seed = 42;
  RunConfig rc = resolve_run_config(dir + "/c.cfg", {"train.lr=0.02"}, &seed);
  EXPECT_EQ(rc.experiment.train.epochs, 3u);
  EXPECT_EQ(rc.experiment.train.lr, 0.02);
  EXPECT_EQ(rc.experiment.model.seed, 42u);
  EXPECT_EQ(rc.experiment.augment.seed, 42u);
  EXPECT_EQ(rc.phantom.seed, 42u);
  EXPECT_THROW(resolve_run_config(dir + "/missing.cfg", {}, nullptr), Error);
}

TEST(RunConfig, InvalidValuesFailValidation) {
  for (const char* o : {"train.lr=0", "train.loss=mse", "train.optimizer=lbfgs", "augment.flip_overall_p=1.5",
                        "model.num_skip_connections=5", "preprocess.height=48", "train.lr_schedule=step",
                        "phantom.modality=PET", "cohort.count=0"}) {
    try {
      resolve_run_config("", {o}, nullptr);
      ADD_FAILURE() << o;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kConfig) << o;
    }
  }
}
