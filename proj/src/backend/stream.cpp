#include "tensorforge/backend/stream.hpp"

namespace tensorforge::backend {

StreamQueue::StreamQueue(StreamId id) : id_(id), worker_([this] { run(); }) {}

StreamQueue::~StreamQueue() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  worker_.join();
}

CompletionEvent StreamQueue::enqueue(Task task, std::uint64_t event_id) {
  CompletionEvent event = CompletionEvent::make_pending(event_id);
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(Item{std::move(task), event});
  }
  wake_.notify_one();
  return event;
}

void StreamQueue::drain() {
  std::unique_lock lock(mutex_);
  idle_.wait(lock, [&] { return queue_.empty() && !busy_; });
}

std::size_t StreamQueue::pending() const {
  std::lock_guard lock(mutex_);
  return queue_.size() + (busy_ ? 1 : 0);
}

void StreamQueue::run() {
  for (;;) {
    Item item;
    {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      // pending work is finished before the worker exits
      if (queue_.empty()) return;
      item = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
    }
    std::exception_ptr error;
    try {
      item.task();
    } catch (...) {
      error = std::current_exception();
    }
    // captured buffers are released before completion is signalled
    item.task = nullptr;
    if (error) {
      item.event.set_failed(error);
    } else {
      item.event.set_done();
    }
    {
      std::lock_guard lock(mutex_);
      busy_ = false;
    }
    idle_.notify_all();
  }
}

}  // namespace tensorforge::backend
