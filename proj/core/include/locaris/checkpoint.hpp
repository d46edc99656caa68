#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "locaris/tensor.hpp"

namespace locaris::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Layout (all little-endian):
//   "LCRSCKPT" | u32 version | u32 tensor_count
//   per tensor: u32 name_len | name bytes | u32 rank | u64 extents[rank] | f32 data[]
inline constexpr char kCheckpointMagic[8] = {'L', 'C', 'R', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
/// Throws CheckpointFormat on a bad magic, version, or truncated file.
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace locaris::nn
