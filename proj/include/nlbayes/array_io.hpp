#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nlbayes/types.hpp"

namespace nlb {

/// ARR1 container (little-endian):
///   "ARR1" | u8 dtype | u8 rank | u64 dims[rank] | row-major payload | u32 CRC-32
/// The CRC covers every preceding byte. c128 is stored as interleaved
/// (re, im) f64 pairs.
enum class DType : std::uint8_t { kFloat64 = 0, kComplex128 = 1, kInt64 = 2 };

std::string to_string(DType dtype);

struct Array {
  DType dtype = DType::kFloat64;
  std::vector<std::uint64_t> dims;
  RealVector real;                   // kFloat64
  ComplexVector complex;             // kComplex128
  std::vector<std::int64_t> integer; // kInt64

  [[nodiscard]] std::uint64_t element_count() const;

  static Array from(const RealVector& v);
  static Array from(const ComplexVector& v);
  static Array from(const RealMatrix& m);
  static Array from(std::vector<std::int64_t> v);

  /// Reinterprets the shape; the element count must not change.
  Array& reshape(std::vector<std::uint64_t> new_dims);

  /// Flattened payload; throws IoError on dtype mismatch.
  [[nodiscard]] const RealVector& as_real() const;
  [[nodiscard]] const ComplexVector& as_complex() const;
  [[nodiscard]] RealMatrix as_real_matrix() const;
};

std::vector<std::uint8_t> encode_array(const Array& array);
Array decode_array(std::span<const std::uint8_t> bytes);

/// Atomic (temp file + rename).
void write_array(const std::filesystem::path& path, const Array& array);
Array read_array(const std::filesystem::path& path);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace nlb
