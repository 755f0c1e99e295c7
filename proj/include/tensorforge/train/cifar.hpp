#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tensorforge/tensor/engine.hpp"

namespace tensorforge::train {

// CIFAR-10 binary record: 1 label byte, then R, G, B planes of 32x32 bytes.
inline constexpr std::int64_t kImageSide = 32;
inline constexpr std::int64_t kChannels = 3;
inline constexpr std::int64_t kClasses = 10;
inline constexpr std::int64_t kPixelBytes = kImageSide * kImageSide * kChannels;
inline constexpr std::int64_t kRecordBytes = 1 + kPixelBytes;

// A split kept in host memory. Pixels are NHWC bytes.
struct DatasetSplit {
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;

  std::int64_t count() const noexcept { return static_cast<std::int64_t>(labels.size()); }
  // First n records (all when n exceeds the count).
  DatasetSplit subset(std::int64_t n) const;

  // int8 [count, 32, 32, 3]
  Tensor images(Engine& engine) const;
  // one-hot float32 [count, 10]
  Tensor onehot(Engine& engine) const;
};

struct Cifar10 {
  DatasetSplit train;
  DatasetSplit test;
};

// Parses one binary batch file; format errors name the file and byte offset.
DatasetSplit read_cifar_file(const std::filesystem::path& file);
void write_cifar_file(const std::filesystem::path& file, const DatasetSplit& split);

// Loads data_batch_1..5.bin and test_batch.bin from a directory.
Cifar10 load_cifar10(const std::filesystem::path& directory);
// Writes a directory in the same layout.
void write_cifar10(const std::filesystem::path& directory, const Cifar10& data, int train_files = 5);

// Class-conditional synthetic images (class prototype plus per-image jitter
// and noise) with balanced labels, for environments without the real set.
DatasetSplit synthesize(std::int64_t count, std::uint64_t seed);

// One-hot rows for labels.
std::vector<float> onehot_rows(const std::vector<std::uint8_t>& labels);

}  // namespace tensorforge::train
