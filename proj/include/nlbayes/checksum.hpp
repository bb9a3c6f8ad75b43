#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

namespace nlb {

/// CRC-32 (IEEE 802.3 polynomial, as in zlib/PNG).
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace nlb
