#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedcpc/tensor/parameter_set.hpp"

namespace fedcpc::federation {

// "FCW1" | version u32 | count u32 | per tensor {name_len u16, name, dtype u8, rank u8, dims u32 x rank,
// little-endian payload} | crc32 u32 over everything after the magic. Header integers are little-endian.
constexpr std::uint32_t kWeightsVersion = 1;

std::vector<std::uint8_t> serialize_weights(const ParameterSet& params);
// Throws DecodeError with a distinct DecodeFailure per defect.
ParameterSet deserialize_weights(std::span<const std::uint8_t> bytes);

// File wrappers; IoError on filesystem failures.
void save_weights(const std::filesystem::path& path, const ParameterSet& params);
ParameterSet load_weights(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

} // namespace fedcpc::federation
