#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "c123/tensor.hpp"

namespace c123 {

// Checkpoint file layout (little-endian throughout):
//   magic "C123" | format version u32 | record count u64 | records...
// Each record:
//   name length u32 | utf-8 name | rank u32 | extents u64 x rank | f32 payload
// Round-trips are bit-exact.
inline constexpr uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace c123
