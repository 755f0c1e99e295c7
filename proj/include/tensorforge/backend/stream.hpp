#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>

#include "tensorforge/backend/event.hpp"
#include "tensorforge/backend/types.hpp"

namespace tensorforge::backend {

using Task = std::function<void()>;

// FIFO operator queue serviced by one worker thread. Operations complete in
// submission order; a throwing operation fails its own event only.
class StreamQueue {
 public:
  explicit StreamQueue(StreamId id);
  ~StreamQueue();

  StreamQueue(const StreamQueue&) = delete;
  StreamQueue& operator=(const StreamQueue&) = delete;

  StreamId id() const noexcept { return id_; }

  CompletionEvent enqueue(Task task, std::uint64_t event_id);

  // Blocks until every operation submitted so far has finished.
  void drain();

  std::size_t pending() const;

 private:
  struct Item {
    Task task;
    CompletionEvent event;
  };

  void run();

  StreamId id_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable idle_;
  std::deque<Item> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace tensorforge::backend
