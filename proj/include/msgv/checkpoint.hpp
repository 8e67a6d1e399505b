#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msgv/tensor.hpp"

namespace msgv {

// On-disk layout (all integers little-endian):
//   magic "MSGV" | u32 version=1 | u64 step
//   u32 rng count, then per stream: u32 name-len, name, 4 x u64 state words
//   u32 tensor count, then per entry: u32 name-len, name, u8 dtype
//     (0 = f64 payload, 1 = raw u8 payload), u32 ndim, ndim x u64 dims,
//     row-major payload
//   u32 CRC32 of every preceding byte
// The run configuration is echoed as a u8 entry named "__config__".
struct CheckpointData {
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, std::array<std::uint64_t, 4>>> rng_states;
  std::string config_echo;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(const std::string& path, const CheckpointData& data);

// Throws IoError with distinct messages for bad magic, unsupported version,
// truncation, and checksum mismatch.
CheckpointData read_checkpoint(const std::string& path);

}  // namespace msgv
