#pragma once

#include <cstddef>
#include <mutex>
#include <span>
#include <vector>

#include "tensorforge/backend/backend.hpp"

namespace tensorforge::core {

// Reusable host-side transfer slots. An upload copies the caller's bytes into
// a slot and enqueues the device write from there, so the caller may reuse its
// memory as soon as the call returns. Transfers larger than a slot are split
// into sequential chunks.
class StagingCache {
 public:
  static constexpr std::size_t kDefaultCapacity = std::size_t{16} << 20;

  explicit StagingCache(backend::Backend& backend, std::size_t capacity_bytes = kDefaultCapacity,
                        std::size_t slot_count = 4);
  ~StagingCache();

  StagingCache(const StagingCache&) = delete;
  StagingCache& operator=(const StagingCache&) = delete;

  backend::CompletionEvent upload(std::span<const std::byte> src, const backend::DeviceBuffer& dst,
                                  backend::StreamId stream);

  std::size_t capacity_bytes() const noexcept { return capacity_; }
  std::size_t slot_bytes() const noexcept { return slot_bytes_; }
  std::size_t chunks_issued() const;

 private:
  struct Slot {
    std::vector<std::byte> data;
    backend::CompletionEvent busy;
  };

  Slot& claim_slot();

  backend::Backend& backend_;
  std::size_t capacity_;
  std::size_t slot_bytes_;
  mutable std::mutex mutex_;
  std::vector<Slot> slots_;
  std::size_t next_ = 0;
  std::size_t chunks_ = 0;
};

}  // namespace tensorforge::core
