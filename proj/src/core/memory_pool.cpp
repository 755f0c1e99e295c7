#include "tensorforge/core/memory_pool.hpp"

#include <algorithm>
#include <string>

#include "tensorforge/error.hpp"

namespace tensorforge::core {

using backend::CompletionEvent;
using backend::DeviceBuffer;

MemoryPool::MemoryPool(backend::Backend& backend, bool zero_on_acquire)
    : backend_(backend), zero_on_acquire_(zero_on_acquire) {}

MemoryPool::~MemoryPool() {
  std::lock_guard lock(mutex_);
  for (auto& d : deferred_) {
    for (auto& e : d.events) {
      try {
        e.wait();
      } catch (...) {
      }
    }
    if (backend_.is_live(d.buffer)) backend_.free(d.buffer);
  }
  for (auto& [cls, list] : free_lists_) {
    for (auto& b : list) backend_.free(b);
  }
  // outstanding buffers die with the pool
  for (auto& [handle, cls] : in_use_) {
    DeviceBuffer b{handle, cls, 0};
    if (backend_.is_live(b)) backend_.free(b);
  }
}

std::size_t MemoryPool::size_class(std::size_t bytes) noexcept {
  std::size_t cls = kMinClass;
  while (cls < bytes) cls <<= 1;
  return cls;
}

DeviceBuffer MemoryPool::acquire(std::size_t bytes) {
  if (bytes == 0) return DeviceBuffer{};
  const std::size_t cls = size_class(bytes);
  std::unique_lock lock(mutex_);
  sweep_locked();
  DeviceBuffer buffer;
  // both are powers of two, so the backend's round-up is a max
  auto& list = free_lists_[std::max(cls, backend_.descriptor().alignment_bytes)];
  if (!list.empty()) {
    buffer = list.back();
    list.pop_back();
    ++stats_.acquire_hits;
    stats_.free_bytes -= static_cast<std::int64_t>(buffer.capacity_bytes);
    if (zero_on_acquire_) backend_.zero(buffer);
  } else {
    buffer = backend_.alloc(cls);
    ++stats_.acquire_misses;
    ++stats_.device_allocs;
    stats_.reserved_bytes += static_cast<std::int64_t>(buffer.capacity_bytes);
  }
  in_use_.emplace(buffer.handle, buffer.capacity_bytes);
  stats_.in_use_bytes += static_cast<std::int64_t>(buffer.capacity_bytes);
  stats_.peak_in_use_bytes = std::max(stats_.peak_in_use_bytes, stats_.in_use_bytes);
  return buffer;
}

void MemoryPool::release(const DeviceBuffer& buffer) {
  if (buffer.empty()) return;
  std::lock_guard lock(mutex_);
  release_locked(buffer);
}

void MemoryPool::release_after(const DeviceBuffer& buffer, std::vector<CompletionEvent> pending) {
  if (buffer.empty()) return;
  std::lock_guard lock(mutex_);
  require(in_use_.count(buffer.handle) != 0, ErrorKind::pool_integrity,
          "release of buffer " + std::to_string(buffer.handle) + " that is not in use");
  std::erase_if(pending, [](const CompletionEvent& e) { return e.ready(); });
  if (pending.empty()) {
    release_locked(buffer);
    return;
  }
  for (const auto& d : deferred_) {
    require(d.buffer.handle != buffer.handle, ErrorKind::pool_integrity,
            "buffer " + std::to_string(buffer.handle) + " released twice");
  }
  deferred_.push_back({buffer, std::move(pending)});
}

void MemoryPool::release_locked(const DeviceBuffer& buffer) {
  auto it = in_use_.find(buffer.handle);
  require(it != in_use_.end(), ErrorKind::pool_integrity,
          "release of buffer " + std::to_string(buffer.handle) + " that this pool does not hold in use");
  for (const auto& d : deferred_) {
    require(d.buffer.handle != buffer.handle, ErrorKind::pool_integrity,
            "buffer " + std::to_string(buffer.handle) + " released twice");
  }
  const std::size_t cap = it->second;
  in_use_.erase(it);
  free_lists_[cap].push_back(DeviceBuffer{buffer.handle, cap, buffer.device_id});
  stats_.in_use_bytes -= static_cast<std::int64_t>(cap);
  stats_.free_bytes += static_cast<std::int64_t>(cap);
}

void MemoryPool::sweep_locked() {
  if (deferred_.empty()) return;
  std::vector<Deferred> keep;
  std::vector<DeviceBuffer> ready;
  for (auto& d : deferred_) {
    std::erase_if(d.events, [](const CompletionEvent& e) { return e.ready(); });
    if (d.events.empty()) {
      ready.push_back(d.buffer);
    } else {
      keep.push_back(std::move(d));
    }
  }
  deferred_ = std::move(keep);
  for (const auto& b : ready) release_locked(b);
}

void MemoryPool::settle() {
  std::vector<CompletionEvent> events;
  {
    std::lock_guard lock(mutex_);
    for (const auto& d : deferred_) events.insert(events.end(), d.events.begin(), d.events.end());
  }
  for (auto& e : events) {
    try {
      e.wait();
    } catch (...) {
    }
  }
  std::lock_guard lock(mutex_);
  sweep_locked();
}

bool MemoryPool::owns(const DeviceBuffer& buffer) const {
  std::lock_guard lock(mutex_);
  return in_use_.count(buffer.handle) != 0;
}

PoolStats MemoryPool::stats() const {
  std::lock_guard lock(mutex_);
  PoolStats s = stats_;
  s.deferred_buffers = static_cast<std::int64_t>(deferred_.size());
  return s;
}

std::size_t MemoryPool::trim() {
  std::lock_guard lock(mutex_);
  sweep_locked();
  std::size_t freed = 0;
  for (auto& [cls, list] : free_lists_) {
    for (const auto& b : list) {
      backend_.free(b);
      freed += b.capacity_bytes;
      ++stats_.device_frees;
    }
    list.clear();
  }
  stats_.reserved_bytes -= static_cast<std::int64_t>(freed);
  stats_.free_bytes -= static_cast<std::int64_t>(freed);
  return freed;
}

}  // namespace tensorforge::core
