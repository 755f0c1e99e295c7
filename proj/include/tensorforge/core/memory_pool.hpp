#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "tensorforge/backend/backend.hpp"

namespace tensorforge::core {

struct PoolStats {
  std::int64_t reserved_bytes = 0;
  std::int64_t in_use_bytes = 0;
  std::int64_t free_bytes = 0;
  std::int64_t peak_in_use_bytes = 0;
  std::int64_t acquire_hits = 0;
  std::int64_t acquire_misses = 0;
  std::int64_t device_allocs = 0;
  std::int64_t device_frees = 0;
  // buffers released by their owner but still awaiting in-flight operations
  std::int64_t deferred_buffers = 0;
};

// Size-class free-list pool over a backend. Classes are powers of two from
// 256 bytes; free lists are LIFO so a release followed by an acquire of the
// same class returns the same handle.
class MemoryPool {
 public:
  static constexpr std::size_t kMinClass = 256;

  explicit MemoryPool(backend::Backend& backend, bool zero_on_acquire = true);
  ~MemoryPool();

  MemoryPool(const MemoryPool&) = delete;
  MemoryPool& operator=(const MemoryPool&) = delete;

  static std::size_t size_class(std::size_t bytes) noexcept;

  backend::DeviceBuffer acquire(std::size_t bytes);
  void release(const backend::DeviceBuffer& buffer);

  // Release once every event in `pending` has completed. Until then the
  // buffer stays in use and is never handed out again.
  void release_after(const backend::DeviceBuffer& buffer, std::vector<backend::CompletionEvent> pending);

  bool owns(const backend::DeviceBuffer& buffer) const;
  PoolStats stats() const;
  std::size_t trim();

  // Blocks until all deferred releases have been applied.
  void settle();

  backend::Backend& backend() noexcept { return backend_; }

 private:
  struct Deferred {
    backend::DeviceBuffer buffer;
    std::vector<backend::CompletionEvent> events;
  };

  void release_locked(const backend::DeviceBuffer& buffer);
  void sweep_locked();

  backend::Backend& backend_;
  bool zero_on_acquire_;

  mutable std::mutex mutex_;
  std::map<std::size_t, std::vector<backend::DeviceBuffer>> free_lists_;
  std::unordered_map<std::uint64_t, std::size_t> in_use_;
  std::vector<Deferred> deferred_;
  PoolStats stats_;
};

}  // namespace tensorforge::core
