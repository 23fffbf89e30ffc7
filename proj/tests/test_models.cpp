#include <gtest/gtest.h>

#include <algorithm>

#include "dsmsr/models/bundle.hpp"
#include "dsmsr/models/discriminator.hpp"
#include "dsmsr/models/generator.hpp"
#include "dsmsr/models/ndsm_net.hpp"
#include "support.hpp"

namespace dsmsr {
namespace {

using testing::random_tensor;
using testing::TempDir;

GeneratorConfig small_generator(int scale = 4, bool prior = false) {
  GeneratorConfig c;
  c.scale = scale;
  c.num_blocks = 1;
  c.rrdbs_per_block = 1;
  c.base_channels = 8;
  c.growth_channels = 4;
  c.bicubic_prior = prior;
  return c;
}

DiscriminatorConfig small_discriminator(int px = 32) {
  DiscriminatorConfig c;
  c.input_px = px;
  c.base_channels = 4;
  c.strided_stages = 2;
  c.dense_units = 8;
  return c;
}

NdsmNetConfig small_ndsm() {
  NdsmNetConfig c;
  c.depth = 2;
  c.base_channels = 4;
  return c;
}

template <typename T>
void set_all(ParamSet<T>& ps, T v) {
  for (const auto& e : ps.entries()) e.var->value.fill(v);
}

TEST(Generator, UpsamplingUnitsFollowScale) {
  EXPECT_EQ(Generator<float>(small_generator(4)).upsampling_units(), 2);
  EXPECT_EQ(Generator<float>(small_generator(8)).upsampling_units(), 3);
  auto bad = small_generator();
  bad.scale = 3;
  EXPECT_THROW(Generator<float>{bad}, UsageError);
}

TEST(Generator, RefinementConvsAddParameters) {
  auto with = small_generator();
  auto without = with;
  without.refinement_convs = false;
  const auto a = Generator<float>(with).params().scalar_count();
  const auto b = Generator<float>(without).params().scalar_count();
  EXPECT_GT(a, b);
  // Two conv+PReLU per upsampling unit plus two in the tail.
  const std::size_t nf = 8, per = nf * nf * 9 + nf + nf;
  EXPECT_EQ(a - b, (2 * 2 + 2) * per);
}

TEST(Generator, OutputGeometryAndRange) {
  for (bool prior : {false, true}) {
    Generator<float> g4(small_generator(4, prior), 1);
    const auto lr = random_tensor<float>({2, 3, 16, 20}, 3);
    const auto sr = g4.infer(lr);
    EXPECT_EQ(sr.shape(), (Shape{2, 3, 64, 80}));
    const auto [lo, hi] = std::minmax_element(sr.values().begin(), sr.values().end());
    EXPECT_GE(*lo, 0.0f);
    EXPECT_LE(*hi, 1.0f);
    Generator<float> g8(small_generator(8, prior), 1);
    EXPECT_EQ(g8.infer(random_tensor<float>({1, 3, 16, 16}, 4)).shape(), (Shape{1, 3, 128, 128}));
  }
}

TEST(Generator, RejectsWrongChannelCount) {
  Generator<float> g(small_generator());
  EXPECT_THROW(g.infer(Tensor<float>({1, 1, 16, 16})), DataError);
}

TEST(Generator, RescaleOutput) {
  EXPECT_EQ(rescale_output(-1.0), 0.0);
  EXPECT_EQ(rescale_output(0.0), 0.5);
  EXPECT_EQ(rescale_output(1.0), 1.0);
}

TEST(Generator, ZeroOutputConvWithPriorGivesBicubic) {
  Generator<float> g(small_generator(4, true), 2);
  g.params().find("out.weight")->value.fill(0.0f);
  const auto lr = random_tensor<float>({1, 3, 16, 16}, 5, 0.1, 0.9);
  const auto sr = g.infer(lr);
  const auto up = bicubic_upsample(from_batch(lr, 0), 4);
  // The prior is clamped 1e-3 inside (-1, 1) before atanh.
  for (std::size_t i = 0; i < up.values.size(); ++i) {
    ASSERT_NEAR(sr[i], std::clamp(up.values[i], 0.0005f, 0.9995f), 1e-5);
  }
}

TEST(Generator, RrdbWithZeroWeightsIsIdentity) {
  ParamSet<double> ps;
  std::mt19937_64 rng(0);
  const auto rrdb = Rrdb<double>::make(ps, "r", 6, 3, rng);
  set_all(ps, 0.0);
  Graph<double> g(false);
  const auto x = random_tensor<double>({1, 6, 5, 5}, 6, -1, 1);
  const auto y = rrdb(g, g.input(x), 0.2);
  EXPECT_EQ(y->value.storage(), x.storage());
}

TEST(Generator, GradientReachesEveryParameter) {
  Generator<double> gen(small_generator(4, true), 7);
  Graph<double> g;
  const auto sr = gen.forward(g, g.input(random_tensor<double>({1, 3, 16, 16}, 8)));
  g.backward(sr, random_tensor<double>(sr->value.shape(), 9, -1, 1));
  for (const auto& e : gen.params().entries()) {
    ASSERT_FALSE(e.var->grad.empty()) << e.name;
    double mag = 0;
    for (double v : e.var->grad.values()) mag += std::abs(v);
    EXPECT_GT(mag, 0.0) << e.name;
  }
}

TEST(Generator, SeedDeterminesInitialization) {
  EXPECT_EQ(Generator<float>(small_generator(), 3).params().checksum(),
            Generator<float>(small_generator(), 3).params().checksum());
  EXPECT_NE(Generator<float>(small_generator(), 3).params().checksum(),
            Generator<float>(small_generator(), 4).params().checksum());
}

TEST(Discriminator, ScoresInUnitIntervalAndDeterministic) {
  Discriminator<float> d(small_discriminator(), 1);
  const auto x = random_tensor<float>({4, 3, 32, 32}, 10);
  const auto s = d.score(x);
  ASSERT_EQ(s.shape(), (Shape{4, 1, 1, 1}));
  for (float v : s.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_EQ(d.score(x).storage(), s.storage());
}

TEST(Discriminator, MoreChannelsMoreParameters) {
  auto c = small_discriminator();
  const auto a = Discriminator<float>(c).params().scalar_count();
  c.base_channels *= 2;
  EXPECT_GT(Discriminator<float>(c).params().scalar_count(), a);
}

TEST(Discriminator, InputSizeChecks) {
  EXPECT_THROW(Discriminator<float>(small_discriminator(30)), UsageError);
  Discriminator<float> d(small_discriminator());
  EXPECT_THROW(d.score(Tensor<float>({1, 3, 64, 64})), DataError);
}

TEST(NdsmNet, ShapeAndNonNegative) {
  NdsmNet<float> net(small_ndsm(), 1);
  const auto h = net.infer(random_tensor<float>({2, 3, 32, 48}, 11));
  EXPECT_EQ(h.shape(), (Shape{2, 1, 32, 48}));
  for (float v : h.values()) EXPECT_GE(v, 0.0f);
  EXPECT_THROW(net.infer(Tensor<float>({1, 1, 32, 32})), DataError);
  EXPECT_THROW(net.infer(Tensor<float>({1, 3, 31, 32})), DataError);
}

TEST(NdsmNet, NonNegativeEvenWithNegativeBias) {
  NdsmNet<float> net(small_ndsm(), 2);
  net.params().find("head.bias")->value.fill(-50.0f);
  const auto h = net.infer(random_tensor<float>({1, 3, 16, 16}, 12));
  for (float v : h.values()) EXPECT_GE(v, 0.0f);
}

TEST(Bundle, RoundTripIsBitExact) {
  TempDir dir("bundle");
  Generator<float> gen(small_generator(4, true), 13);
  save_bundle(make_bundle(gen, {{"steps", "12"}}), dir / "g.bundle");
  const auto b = load_bundle(dir / "g.bundle");
  EXPECT_EQ(b.meta.at("steps"), "12");
  const auto back = generator_from(b);
  EXPECT_EQ(back.config(), gen.config());
  EXPECT_EQ(back.params().checksum(), gen.params().checksum());
  const auto lr = random_tensor<float>({1, 3, 16, 16}, 14);
  EXPECT_EQ(back.infer(lr).storage(), gen.infer(lr).storage());

  Discriminator<float> d(small_discriminator(), 15);
  EXPECT_EQ(discriminator_from(deserialize_bundle(serialize_bundle(make_bundle(d)))).params().checksum(),
            d.params().checksum());
  NdsmNet<float> n(small_ndsm(), 16);
  EXPECT_EQ(ndsm_net_from(deserialize_bundle(serialize_bundle(make_bundle(n)))).params().checksum(),
            n.params().checksum());
}

TEST(Bundle, TruncatedFileRejected) {
  const auto bytes = serialize_bundle(make_bundle(Generator<float>(small_generator())));
  for (std::size_t keep : {std::size_t{4}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(deserialize_bundle(std::string_view(bytes).substr(0, keep)), CheckpointError) << keep;
  }
}

TEST(Bundle, CorruptionDetected) {
  auto bytes = serialize_bundle(make_bundle(NdsmNet<float>(small_ndsm())));
  bytes[bytes.size() - 20] ^= 0x01;
  EXPECT_THROW(deserialize_bundle(bytes), CheckpointError);
}

TEST(Bundle, WrongKindIsTypedError) {
  const auto b = make_bundle(NdsmNet<float>(small_ndsm()));
  EXPECT_THROW(generator_from(b), BundleKindError);
  EXPECT_THROW(discriminator_from(b), BundleKindError);
}

TEST(Bundle, VersionMismatchRejected) {
  auto bytes = serialize_bundle(make_bundle(Generator<float>(small_generator())));
  bytes[8] = 2;
  try {
    deserialize_bundle(bytes);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("format_version"), std::string::npos);
  }
}

TEST(Bundle, MissingFile) {
  TempDir dir("bundle_missing");
  EXPECT_THROW(load_bundle(dir / "none.bundle"), CheckpointError);
}

}  // namespace
}  // namespace dsmsr
