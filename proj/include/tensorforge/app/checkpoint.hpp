#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tensorforge/autograd/unit.hpp"

namespace tensorforge::app {

// File layout, little-endian:
//   "TFRG" | u32 version | u32 entry count
//   per entry: u32 name length | name | u32 rank | i64 extents[rank] | f32 values (logical, unpadded)
// Entries are the module's state() (parameters and running statistics) in name order.
inline constexpr char kCheckpointMagic[4] = {'T', 'F', 'R', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin);

void save_checkpoint(autograd::Unit& module, const std::filesystem::path& path);
// Restores every state tensor by name. Any missing, extra or mis-shaped entry
// raises a format error naming it; nothing is written in that case.
void load_checkpoint(const std::filesystem::path& path, autograd::Unit& module);

}  // namespace tensorforge::app
