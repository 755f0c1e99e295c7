#pragma once

#include <cstdint>
#include <future>
#include <vector>

#include "tensorforge/train/cifar.hpp"

namespace tensorforge::train {

struct Batch {
  Tensor input;  // int8 [B, 32, 32, 3]
  Tensor label;  // float32 [B, 10]
};

// Mini-batch iterator that assembles the next batch on a helper thread while
// the caller trains on the current one. Short final batches are dropped unless
// keep_last is set.
class BufferedIter {
 public:
  BufferedIter(Engine& engine, const DatasetSplit& split, std::int64_t batch_size, std::uint64_t seed = 0,
               bool keep_last = false);
  ~BufferedIter();

  BufferedIter(const BufferedIter&) = delete;
  BufferedIter& operator=(const BufferedIter&) = delete;

  // Rewinds; a new permutation when shuffle, else identity order. Any batch
  // being prepared is discarded.
  BufferedIter& reset(bool shuffle);
  bool has_next() const noexcept;
  Batch next();

  std::int64_t batch_size() const noexcept { return batch_; }
  std::int64_t batches_per_epoch() const noexcept;
  const std::vector<std::int64_t>& order() const noexcept { return order_; }

 private:
  struct HostBatch {
    std::vector<std::uint8_t> pixels;
    std::vector<float> labels;
    std::int64_t rows = 0;
  };

  HostBatch gather(std::int64_t begin, std::int64_t rows) const;
  std::int64_t rows_at(std::int64_t cursor) const noexcept;
  void prefetch();
  void drain() noexcept;

  Engine& engine_;
  const DatasetSplit& split_;
  std::int64_t batch_;
  bool keep_last_;
  std::uint64_t seed_;
  std::uint64_t shuffles_ = 0;
  std::vector<std::int64_t> order_;
  std::int64_t cursor_ = 0;
  std::future<HostBatch> pending_;
};

}  // namespace tensorforge::train
