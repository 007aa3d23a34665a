#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xvfg/errors.hpp"
#include "xvfg/tensor.hpp"

namespace xvfg {

/// Named tensors in file order.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr char kCheckpointMagic[4] = {'X', 'V', 'F', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeFloat64 = 1;

// Layout, all integers little-endian:
//   "XVFG" | u32 version | u32 count
//   count x { u32 name_len | name | u8 dtype | u8 rank | u32 dims[rank] | payload }
//   u32 CRC32 (IEEE) of every preceding byte
// Payload is IEEE-754 binary64, little-endian, row-major.

/// Throws CheckpointError on duplicate or empty names.
std::vector<std::uint8_t> serialize_checkpoint(const NamedTensors& tensors);
/// Throws CrcError on checksum mismatch, CheckpointError on any other defect.
NamedTensors parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace xvfg
