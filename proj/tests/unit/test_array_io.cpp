#include <gtest/gtest.h>

#include <filesystem>

#include "nlbayes/array_io.hpp"
#include "test_support.hpp"

namespace nlb {
namespace {

namespace fs = std::filesystem;

TEST(ArrayIo, RealMatrixRoundTrip) {
  RealMatrix m(3, 4);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = 0.1 * static_cast<double>(i) - 0.55;
  const auto bytes = encode_array(Array::from(m));
  const auto back = decode_array(bytes);
  EXPECT_EQ(back.dtype, DType::kFloat64);
  EXPECT_EQ(back.dims, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(back.as_real_matrix(), m);
  EXPECT_EQ(encode_array(back), bytes);
}

TEST(ArrayIo, LayoutIsDocumented) {
  const auto bytes = encode_array(Array::from(RealVector{{1.5}}));
  ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 8 + 8 + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ARR1");
  EXPECT_EQ(bytes[4], 0);  // f64
  EXPECT_EQ(bytes[5], 1);  // rank
  EXPECT_EQ(bytes[6], 1);  // dims[0] low byte
  double v;
  std::memcpy(&v, bytes.data() + 14, 8);
  EXPECT_EQ(v, 1.5);
}

TEST(ArrayIo, ComplexAndIntegerRoundTrip) {
  const ComplexVector c = testing::random_complex(7, 3);
  const auto cb = decode_array(encode_array(Array::from(c)));
  EXPECT_EQ(cb.dtype, DType::kComplex128);
  EXPECT_EQ(cb.as_complex(), c);
  EXPECT_THROW((void)cb.as_real(), IoError);

  Array ints = Array::from(std::vector<std::int64_t>{1, -2, 3, 4, 5, 6});
  ints.reshape({2, 3});
  const auto ib = decode_array(encode_array(ints));
  EXPECT_EQ(ib.integer, ints.integer);
  EXPECT_EQ(ib.dims, (std::vector<std::uint64_t>{2, 3}));
  EXPECT_THROW(ints.reshape({4}), ConfigError);
}

TEST(ArrayIo, ScalarRankZero) {
  Array a = Array::from(RealVector{{2.0}});
  a.reshape({});
  const auto back = decode_array(encode_array(a));
  EXPECT_TRUE(back.dims.empty());
  EXPECT_EQ(back.real[0], 2.0);
}

TEST(ArrayIo, Rejections) {
  const auto bytes = encode_array(Array::from(testing::random_real(5, 1)));
  auto flipped = bytes;
  flipped[20] ^= 1;
  EXPECT_THROW((void)decode_array(flipped), IoError);
  auto magic = bytes;
  magic[3] = '2';
  EXPECT_THROW((void)decode_array(magic), IoError);
  EXPECT_THROW((void)decode_array(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 12)), IoError);
}

TEST(ArrayIo, FilesAreAtomicAndReadable) {
  const auto dir = fs::temp_directory_path() / "nlb_array_io_test";
  fs::create_directories(dir);
  const RealVector v = testing::random_real(9, 2);
  write_array(dir / "v.arr", Array::from(v));
  EXPECT_EQ(read_array(dir / "v.arr").as_real(), v);
  write_text_atomic(dir / "t.txt", "a=1\n");
  EXPECT_EQ(read_text(dir / "t.txt"), "a=1\n");
  for (const auto& entry : fs::directory_iterator(dir)) {
    EXPECT_EQ(entry.path().extension() == ".tmp", false) << entry.path();
  }
  EXPECT_THROW((void)read_array(dir / "nope.arr"), IoError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace nlb
