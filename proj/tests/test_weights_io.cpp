#include <gtest/gtest.h>

#include <cstring>

#include "swtr/weights_io.hpp"
#include "test_util.hpp"

using namespace swtr;
using swtr::testing::temp_dir;

namespace {

SwtrConfig small_config(std::size_t layers = 4) {
  SwtrConfig c = toy_config();
  c.input_height = c.input_width = 32;
  c.d_model = 12;
  c.heads = 3;
  c.num_transformer_layers = layers;
  c.encoder_channels = {4, 6, 8, 10};
  c.decoder_channels = {8, 6, 4, 4};
  return c;
}

ErrorCode decode_error(const std::string& bytes) {
  try {
    decode_weight_file(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kContract;
}

std::string encoded(const SwtrModel<float>& m) { return encode_weight_file(to_weight_file(m)); }

}  // namespace

TEST(WeightsIo, RoundtripIsBitExact) {
  const std::string dir = temp_dir("weights_roundtrip");
  SwtrModel<float> m(small_config());
  save_weights(m, dir + "/m.swtr");
  SwtrModel<float> back = load_weights<float>(dir + "/m.swtr");
  EXPECT_EQ(parameter_checksum(back.parameters()), parameter_checksum(m.parameters()));
  EXPECT_EQ(config_text(back.config()), config_text(m.config()));
  for (const auto& [name, t] : m.parameters().items()) EXPECT_EQ(back.parameters().at(name).vec(), t.vec()) << name;
  save_weights(back, dir + "/m2.swtr");
  EXPECT_EQ(detail::read_file(dir + "/m.swtr"), detail::read_file(dir + "/m2.swtr"));
}

TEST(WeightsIo, TruncatedFileIsLengthError) {
  const std::string bytes = encoded(SwtrModel<float>(small_config()));
  EXPECT_EQ(decode_error(bytes.substr(0, bytes.size() - 1)), ErrorCode::kLength);
  EXPECT_EQ(decode_error(bytes.substr(0, bytes.size() / 2)), ErrorCode::kLength);
  EXPECT_EQ(decode_error(bytes.substr(0, 10)), ErrorCode::kLength);
}

TEST(WeightsIo, BadMagicAndVersionAreFormatErrors) {
  std::string bytes = encoded(SwtrModel<float>(small_config()));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(decode_error(bad), ErrorCode::kFormat);
  bad = bytes;
  bad[4] = 9;
  EXPECT_EQ(decode_error(bad), ErrorCode::kFormat);
}

TEST(WeightsIo, MalformedManifestIsFormatError) {
  std::string bytes = encoded(SwtrModel<float>(small_config()));
  bytes[16] = '!';  // first manifest byte
  EXPECT_EQ(decode_error(bytes), ErrorCode::kFormat);
}

TEST(WeightsIo, FlippedPayloadBitIsChecksumError) {
  std::string bytes = encoded(SwtrModel<float>(small_config()));
  bytes[bytes.size() - 20] ^= 0x01;
  EXPECT_EQ(decode_error(bytes), ErrorCode::kChecksum);
}

TEST(WeightsIo, DuplicateTensorNameRejected) {
  SwtrModel<float> m(small_config());
  WeightFile wf = to_weight_file(m);
  wf.tensors.push_back(wf.tensors.front());
  EXPECT_EQ(decode_error(encode_weight_file(wf)), ErrorCode::kTensorName);
}

TEST(WeightsIo, LayerMismatchListsMissingAndExtraNames) {
  SwtrModel<float> twelve(small_config(12));
  SwtrModel<float> eight(small_config(8));
  try {
    assign_weights(eight, decode_weight_file(encoded(twelve)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTensorName);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("unexpected"), std::string::npos);
    EXPECT_NE(msg.find("bottleneck.pair5.swmsa"), std::string::npos);
  }
  try {
    assign_weights(twelve, decode_weight_file(encoded(eight)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTensorName);
    EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
  }
}

TEST(WeightsIo, ShapeMismatchIsDimensionError) {
  SwtrModel<float> m(small_config());
  WeightFile wf = to_weight_file(m);
  wf.tensors[0].shape = {wf.tensors[0].values.size()};
  try {
    assign_weights(m, wf);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimension);
  }
}

TEST(WeightsIo, MissingFileIsIoError) {
  try {
    read_weight_file("/nonexistent/dir/none.swtr");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

TEST(WeightsIo, ExtraReservedTensorsAreIgnoredOnLoad) {
  SwtrModel<float> m(small_config());
  WeightFile wf = to_weight_file(m, {{"optim.steps", {2}, {3.0f, 0.0f}}});
  SwtrModel<float> other(small_config());
  assign_weights(other, decode_weight_file(encode_weight_file(wf)));
  EXPECT_EQ(parameter_checksum(other.parameters()), parameter_checksum(m.parameters()));
}

TEST(WeightsIo, ErrorCodesAreDistinct) {
  const ErrorCode codes[] = {ErrorCode::kIo, ErrorCode::kFormat, ErrorCode::kLength, ErrorCode::kChecksum,
                             ErrorCode::kTensorName, ErrorCode::kDimension};
  for (std::size_t i = 0; i < std::size(codes); ++i)
    for (std::size_t j = i + 1; j < std::size(codes); ++j) EXPECT_NE(static_cast<int>(codes[i]), static_cast<int>(codes[j]));
}
