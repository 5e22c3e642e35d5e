#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aqa/nn.hpp"

namespace aqa {

// Binary layout, little-endian throughout:
//   "AQAT" | version u32 | parameter count u32
//   per parameter: name length u32 | UTF-8 name | rank u32 | dims u32×rank |
//                  float32 data
inline constexpr char kCheckpointMagic[4] = {'A', 'Q', 'A', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore& params);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ParameterStore& params, const std::filesystem::path& path);
// Names, order and shapes must match the store exactly.
void load_checkpoint(ParameterStore& params, const std::filesystem::path& path);
void load_checkpoint(ParameterStore& params, const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace aqa
