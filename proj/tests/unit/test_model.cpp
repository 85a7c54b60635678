#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "nrt/model.hpp"

using namespace nrt;

namespace {

Model mnist_cnn(std::uint64_t seed = 1) { return build_small_cnn({1, 28, 28}, 10, seed); }

Tensor noise_image(std::uint64_t seed) {
  std::mt19937 rng(static_cast<unsigned>(seed));
  std::uniform_real_distribution<float> d(0, 1);
  Tensor t({1, 28, 28});
  for (float& v : t.data()) v = d(rng);
  return t;
}

}  // namespace

TEST(Model, SmallCnnShapesAndParameterCount) {
  Model m = mnist_cnn();
  EXPECT_EQ(m.layers().size(), 12u);
  EXPECT_EQ(m.forward_logits(noise_image(0)).shape(), (Shape{10}));
  // 6*1*25+6 + 16*6*25+16 + 120*256+120 + 84*120+84 + 10*84+10
  EXPECT_EQ(m.parameter_count(), 156u + 2416u + 30840u + 10164u + 850u);
}

TEST(Model, InitIsFanInBoundedAndSeeded) {
  Model a = mnist_cnn(5), b = mnist_cnn(5), c = mnist_cnn(6);
  EXPECT_EQ(serialize_model(a), serialize_model(b));
  EXPECT_NE(serialize_model(a), serialize_model(c));
  const double bound = 1.0 / std::sqrt(25.0);
  for (float v : a.params()[0].tensor.data()) EXPECT_LE(std::abs(v), bound + 1e-7);
}

TEST(Model, BadArchitectureIsConfigError) {
  EXPECT_THROW(Model({1, 8, 8}, {LayerSpec::conv(2, 9)}, 2), ConfigError);
  EXPECT_THROW(Model({1, 8, 8}, {LayerSpec::flatten(), LayerSpec::dense(3)}, 2), ConfigError);
  EXPECT_THROW(Model({1, 8, 8}, {LayerSpec::flatten(), LayerSpec::dense(2)}, 1), ConfigError);
  EXPECT_THROW(build_small_cnn({1, 12, 12}, 10, 0), ConfigError);
}

TEST(Model, WrongInputShapeIsDimensionError) {
  Model m = mnist_cnn();
  EXPECT_THROW(m.forward_logits(Tensor({1, 27, 28})), DimensionError);
}

TEST(Model, PredictIsConsistent) {
  Model m = mnist_cnn(3);
  Prediction p = predict(m, noise_image(4));
  double s = 0;
  for (double v : p.probs) s += v;
  EXPECT_NEAR(s, 1.0, 1e-9);
  EXPECT_EQ(p.predicted_class, argmax(p.logits.data()));
  EXPECT_DOUBLE_EQ(p.confidence, p.probs[p.predicted_class]);
}

TEST(Model, BatchForwardMatchesSingle) {
  Model m = mnist_cnn(2);
  std::vector<Tensor> xs = {noise_image(1), noise_image(2), noise_image(3)};
  const auto ys = m.forward_logits(xs);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(ys[i], m.forward_logits(xs[i]));
}

TEST(Serialization, RoundTripIsBitExact) {
  Model m = mnist_cnn(9);
  m.metadata()["trigger"] = {{"target", 3}};
  const auto bytes = serialize_model(m);
  Model back = deserialize_model(bytes);
  EXPECT_EQ(serialize_model(back), bytes);
  EXPECT_EQ(back.layers(), m.layers());
  EXPECT_EQ(back.metadata()["trigger"]["target"], 3);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = noise_image(s);
    EXPECT_EQ(back.forward_logits(x), m.forward_logits(x));
  }
}

TEST(Serialization, FileRoundTripAndStripMetadata) {
  Model m = mnist_cnn(4);
  m.metadata()["poison_fraction"] = 0.1;
  const auto path = std::filesystem::temp_directory_path() / "nrt_test_model.nrtm";
  save_model(m, path);
  EXPECT_EQ(load_model(path).metadata()["poison_fraction"], 0.1);
  Model stripped = load_model(path, {.strip_metadata = true});
  EXPECT_TRUE(stripped.metadata().empty());
  EXPECT_EQ(stripped.forward_logits(noise_image(0)), m.forward_logits(noise_image(0)));
  std::filesystem::remove(path);
  EXPECT_THROW(load_model(path), std::runtime_error);
}

TEST(Serialization, CorruptionIsDetected) {
  const auto good = serialize_model(mnist_cnn());

  auto truncated = good;
  truncated.resize(good.size() / 2);
  EXPECT_THROW(deserialize_model(truncated), ModelTruncatedError);
  EXPECT_THROW(deserialize_model(std::vector<std::uint8_t>(good.begin(), good.begin() + 6)),
               ModelTruncatedError);

  auto flipped = good;
  flipped[good.size() - 100] ^= 0x40;
  EXPECT_THROW(deserialize_model(flipped), ModelChecksumError);

  auto version = good;
  version[4] = 99;
  EXPECT_THROW(deserialize_model(version), ModelVersionError);

  auto magic = good;
  magic[0] = 'X';
  try {
    deserialize_model(magic);
    FAIL() << "bad magic accepted";
  } catch (const ModelFormatError& e) {
    EXPECT_EQ(dynamic_cast<const ModelVersionError*>(&e), nullptr);
  }
}

TEST(Serialization, ChecksumHelpers) {
  // FNV-1a 64 reference values.
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ULL);
  const std::uint8_t a[] = {'a'};
  EXPECT_EQ(fnv1a64(a), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Serialization, LayerJsonRoundTrip) {
  const Model m = mnist_cnn();
  for (const LayerSpec& l : m.layers()) EXPECT_EQ(layer_from_json(layer_to_json(l)), l);
}
