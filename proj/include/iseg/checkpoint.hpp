#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "iseg/tensor.hpp"

namespace iseg {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// CPKT1 layout, all integers little-endian:
//   "CPKT1" | u32 version | u64 tensor count
//   per tensor: u64 name length | UTF-8 name | u64 rank | u64 extents[rank] | f64 data[numel]
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the encoded bytes; used for manifest and checkpoint fingerprints.
std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size);
std::string hex64(std::uint64_t value);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

} // namespace iseg
