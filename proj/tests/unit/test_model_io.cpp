#include <gtest/gtest.h>

#include <filesystem>

#include "nlbayes/array_io.hpp"
#include "nlbayes/checksum.hpp"
#include "nlbayes/model_io.hpp"
#include "test_support.hpp"

namespace nlb {
namespace {

namespace fs = std::filesystem;

const fs::path kData = NLB_TEST_DATA;

GeneratorModel small_model() {
  return GeneratorBuilder({1, 2, 2}, 17)
      .conv2d(3, 3, 1)
      .batch_norm()
      .leaky_relu()
      .upsample()
      .conv2d(1, 1, 0)
      .sigmoid()
      .build();
}

LoadError::Kind load_error_kind(std::span<const std::uint8_t> bytes) {
  try {
    (void)parse_model(bytes);
  } catch (const LoadError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected LoadError";
  return LoadError::Kind::kBadLayer;
}

// Re-seals a modified body with a valid checksum.
std::vector<std::uint8_t> reseal(std::vector<std::uint8_t> bytes) {
  bytes.resize(bytes.size() - 4);
  const std::uint32_t crc = crc32(bytes);
  const auto* p = reinterpret_cast<const std::uint8_t*>(&crc);
  bytes.insert(bytes.end(), p, p + 4);
  return bytes;
}

TEST(Crc32, KnownVector) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())), 0xCBF43926u);
}

TEST(ModelIo, RoundTripIsBitExact) {
  const auto model = small_model();
  const auto bytes = serialize_model(model, 0.5);
  const auto loaded = parse_model(bytes);
  ASSERT_TRUE(loaded.augmented());
  EXPECT_EQ(*loaded.scale_cap, 0.5);
  EXPECT_EQ(loaded.base->input_shape(), model.input_shape());
  EXPECT_EQ(loaded.base->layers().size(), model.layers().size());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RealVector z = testing::random_real(4, seed);
    EXPECT_EQ(loaded.base->forward(z), model.forward(z));
  }
  EXPECT_EQ(serialize_model(*loaded.base, loaded.scale_cap), bytes);
}

TEST(ModelIo, PlainModelHasNoCap) {
  const auto loaded = parse_model(serialize_model(small_model()));
  EXPECT_FALSE(loaded.augmented());
  EXPECT_EQ(loaded.prior()->in_dim(), 4);
  const auto aug = parse_model(serialize_model(small_model(), 0.2));
  EXPECT_EQ(aug.prior()->in_dim(), 5);
}

TEST(ModelIo, FileRoundTrip) {
  const auto dir = fs::temp_directory_path() / "nlb_model_io_test";
  fs::create_directories(dir);
  const auto path = dir / "model.agdp";
  const auto model = small_model();
  save_model(model, std::nullopt, path);
  const auto loaded = load_model(path);
  const RealVector z = testing::random_real(4, 3);
  EXPECT_EQ(loaded.base->forward(z), model.forward(z));
  EXPECT_THROW((void)load_model(dir / "missing.agdp"), IoError);
  fs::remove_all(dir);
}

TEST(ModelIo, Rejections) {
  const auto bytes = serialize_model(small_model(), 0.2);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(load_error_kind(bad_magic), LoadError::Kind::kBadMagic);

  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_EQ(load_error_kind(reseal(bad_version)), LoadError::Kind::kBadVersion);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_EQ(load_error_kind(flipped), LoadError::Kind::kChecksum);

  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 9);
  EXPECT_EQ(load_error_kind(truncated), LoadError::Kind::kChecksum);

  // A well-sealed file whose layer data ends early.
  std::vector<std::uint8_t> short_body(bytes.begin(), bytes.end() - 24);
  short_body.resize(short_body.size() + 4);
  EXPECT_EQ(load_error_kind(reseal(short_body)), LoadError::Kind::kTruncated);

  auto bad_tag = bytes;
  bad_tag[4 + 4 + 4 + 12 + 1 + 8] = 99;  // first layer tag
  EXPECT_EQ(load_error_kind(reseal(bad_tag)), LoadError::Kind::kBadLayer);
}

TEST(ModelIo, ShapeChainMismatch) {
  const std::vector<Layer> layers = {
      FullyConnected{RealMatrix::Zero(128, 100), RealVector::Zero(128)},
      FullyConnected{RealMatrix::Zero(4, 256), RealVector::Zero(4)},
  };
  // Hand-assemble a file (a GeneratorModel refuses this chain).
  std::vector<std::uint8_t> bytes = {'A', 'G', 'D', 'P'};
  const auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put32(1);
  put32(2);
  put32(100);
  put32(1);
  put32(1);
  bytes.push_back(0);
  for (const auto& layer : layers) {
    const auto& fc = std::get<FullyConnected>(layer);
    bytes.push_back(1);
    put32(static_cast<std::uint32_t>(fc.weight.cols()));
    put32(static_cast<std::uint32_t>(fc.weight.rows()));
    bytes.resize(bytes.size() + 4 * static_cast<std::size_t>(fc.weight.size() + fc.bias.size()), 0);
  }
  put32(0);
  EXPECT_EQ(load_error_kind(reseal(bytes)), LoadError::Kind::kShapeChain);
}

class GoldenFixture : public ::testing::TestWithParam<std::string> {};

TEST_P(GoldenFixture, MatchesIndependentReference) {
  const auto loaded = load_model(kData / (GetParam() + ".agdp"));
  const auto prior = loaded.prior();
  const RealMatrix latents = read_array(kData / (GetParam() + "_latents.arr")).as_real_matrix();
  const RealMatrix outputs = read_array(kData / (GetParam() + "_outputs.arr")).as_real_matrix();
  ASSERT_EQ(latents.cols(), prior->in_dim());
  ASSERT_EQ(outputs.cols(), prior->out_dim());
  for (Index t = 0; t < latents.rows(); ++t) {
    const RealVector out = prior->forward(latents.row(t).transpose());
    EXPECT_LE((out - outputs.row(t).transpose()).cwiseAbs().maxCoeff(), 1e-12) << "latent " << t;
  }
  EXPECT_LE(adjoint_check(*prior, 20, 5), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Fixtures, GoldenFixture, ::testing::Values("golden_conv", "golden_fc"));

}  // namespace
}  // namespace nlb
