#include "tensorforge/core/staging_cache.hpp"

#include <algorithm>
#include <cstring>

#include "tensorforge/error.hpp"

namespace tensorforge::core {

using backend::CompletionEvent;

StagingCache::StagingCache(backend::Backend& backend, std::size_t capacity_bytes, std::size_t slot_count)
    : backend_(backend), capacity_(capacity_bytes) {
  require(slot_count >= 1 && capacity_bytes >= slot_count, ErrorKind::argument,
          "staging cache needs at least one byte per slot");
  slot_bytes_ = capacity_bytes / slot_count;
  slots_.resize(slot_count);
}

StagingCache::~StagingCache() {
  for (auto& s : slots_) {
    try {
      s.busy.wait();
    } catch (...) {
    }
  }
}

std::size_t StagingCache::chunks_issued() const {
  std::lock_guard lock(mutex_);
  return chunks_;
}

// Round-robin; waits for the slot's previous transfer to drain.
StagingCache::Slot& StagingCache::claim_slot() {
  Slot& slot = slots_[next_];
  next_ = (next_ + 1) % slots_.size();
  try {
    slot.busy.wait();
  } catch (...) {
    // the failure belongs to the earlier transfer
  }
  if (slot.data.size() < slot_bytes_) slot.data.resize(slot_bytes_);
  return slot;
}

CompletionEvent StagingCache::upload(std::span<const std::byte> src, const backend::DeviceBuffer& dst,
                                     backend::StreamId stream) {
  require(src.size() <= dst.capacity_bytes, ErrorKind::bounds, "staged upload beyond destination capacity");
  if (src.empty()) return CompletionEvent{};
  std::lock_guard lock(mutex_);
  CompletionEvent last;
  for (std::size_t offset = 0; offset < src.size(); offset += slot_bytes_) {
    const std::size_t n = std::min(slot_bytes_, src.size() - offset);
    Slot& slot = claim_slot();
    std::memcpy(slot.data.data(), src.data() + offset, n);
    std::span<const std::byte> view(slot.data.data(), n);
    backend::Backend* be = &backend_;
    last = backend_.enqueue(stream, [be, dst, offset, view] { be->write(dst, offset, view); });
    slot.busy = last;
    ++chunks_;
  }
  // chunks share one stream, so the last event covers them all
  return last;
}

}  // namespace tensorforge::core
