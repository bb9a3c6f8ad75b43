#include "nlbayes/array_io.hpp"

#include <array>

#include "binary_io.hpp"
#include "nlbayes/checksum.hpp"

namespace nlb {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'A', 'R', 'R', '1'};

std::uint64_t product(const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

std::string to_string(DType dtype) {
  switch (dtype) {
    case DType::kFloat64: return "f64";
    case DType::kComplex128: return "c128";
    case DType::kInt64: return "i64";
  }
  return "unknown";
}

std::uint64_t Array::element_count() const { return product(dims); }

Array Array::from(const RealVector& v) {
  Array a;
  a.dtype = DType::kFloat64;
  a.dims = {static_cast<std::uint64_t>(v.size())};
  a.real = v;
  return a;
}

Array Array::from(const ComplexVector& v) {
  Array a;
  a.dtype = DType::kComplex128;
  a.dims = {static_cast<std::uint64_t>(v.size())};
  a.complex = v;
  return a;
}

Array Array::from(const RealMatrix& m) {
  Array a;
  a.dtype = DType::kFloat64;
  a.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  a.real = Eigen::Map<const RealVector>(m.data(), m.size());  // RealMatrix is row-major
  return a;
}

Array Array::from(std::vector<std::int64_t> v) {
  Array a;
  a.dtype = DType::kInt64;
  a.dims = {static_cast<std::uint64_t>(v.size())};
  a.integer = std::move(v);
  return a;
}

Array& Array::reshape(std::vector<std::uint64_t> new_dims) {
  if (product(new_dims) != element_count()) throw ConfigError("array reshape: element count changes");
  dims = std::move(new_dims);
  return *this;
}

const RealVector& Array::as_real() const {
  if (dtype != DType::kFloat64) throw IoError("array: expected f64 payload, found " + to_string(dtype));
  return real;
}

const ComplexVector& Array::as_complex() const {
  if (dtype != DType::kComplex128) {
    throw IoError("array: expected c128 payload, found " + to_string(dtype));
  }
  return complex;
}

RealMatrix Array::as_real_matrix() const {
  const auto& v = as_real();
  if (dims.size() != 2) throw IoError("array: expected rank 2, found rank " + std::to_string(dims.size()));
  return Eigen::Map<const RealMatrix>(v.data(), static_cast<Index>(dims[0]), static_cast<Index>(dims[1]));
}

std::vector<std::uint8_t> encode_array(const Array& array) {
  const auto n = array.element_count();
  detail::ByteWriter w;
  for (auto b : kMagic) w.put(b);
  w.put(static_cast<std::uint8_t>(array.dtype));
  w.put(static_cast<std::uint8_t>(array.dims.size()));
  for (auto d : array.dims) w.put(d);
  switch (array.dtype) {
    case DType::kFloat64:
      if (static_cast<std::uint64_t>(array.real.size()) != n) throw ConfigError("array: payload/shape mismatch");
      for (Index i = 0; i < array.real.size(); ++i) w.put(array.real[i]);
      break;
    case DType::kComplex128:
      if (static_cast<std::uint64_t>(array.complex.size()) != n) throw ConfigError("array: payload/shape mismatch");
      for (Index i = 0; i < array.complex.size(); ++i) {
        w.put(array.complex[i].real());
        w.put(array.complex[i].imag());
      }
      break;
    case DType::kInt64:
      if (array.integer.size() != n) throw ConfigError("array: payload/shape mismatch");
      for (auto v : array.integer) w.put(v);
      break;
  }
  w.put(crc32(w.bytes()));
  return std::move(w.bytes());
}

Array decode_array(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw IoError("ARR1: bad magic bytes");
  }
  if (bytes.size() < 10) throw IoError("ARR1: file truncated");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, sizeof(stored));
  const auto body = bytes.first(bytes.size() - 4);
  if (crc32(body) != stored) throw IoError("ARR1: CRC-32 mismatch");

  detail::ByteReader r(body.subspan(4), [] { throw IoError("ARR1: file truncated"); });
  Array a;
  const auto tag = r.get<std::uint8_t>();
  if (tag > 2) throw IoError("ARR1: unknown dtype tag " + std::to_string(tag));
  a.dtype = static_cast<DType>(tag);
  const auto rank = r.get<std::uint8_t>();
  for (int i = 0; i < rank; ++i) a.dims.push_back(r.get<std::uint64_t>());
  const auto n = a.element_count();
  const std::size_t width = a.dtype == DType::kComplex128 ? 16 : 8;
  if (r.remaining() / width < n || r.remaining() != n * width) {
    throw IoError("ARR1: payload size does not match dims");
  }
  const auto count = static_cast<Index>(n);
  switch (a.dtype) {
    case DType::kFloat64:
      a.real.resize(count);
      for (Index i = 0; i < count; ++i) a.real[i] = r.get<double>();
      break;
    case DType::kComplex128:
      a.complex.resize(count);
      for (Index i = 0; i < count; ++i) {
        const double re = r.get<double>();
        a.complex[i] = {re, r.get<double>()};
      }
      break;
    case DType::kInt64:
      a.integer.resize(n);
      for (auto& v : a.integer) v = r.get<std::int64_t>();
      break;
  }
  return a;
}

void write_array(const std::filesystem::path& path, const Array& array) {
  detail::write_file_atomic(path, encode_array(array));
}

Array read_array(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_array(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  detail::write_file_atomic(
      path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace nlb
