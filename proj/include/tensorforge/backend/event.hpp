#pragma once

#include <condition_variable>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>

namespace tensorforge::backend {

enum class EventState { pending, done, failed };

// Awaitable marker for the completion of one enqueued operation. Copies share
// state. A default-constructed event is already done.
class CompletionEvent {
 public:
  CompletionEvent() = default;

  static CompletionEvent make_pending(std::uint64_t id) {
    CompletionEvent e;
    e.state_ = std::make_shared<Shared>();
    e.state_->id = id;
    return e;
  }

  static CompletionEvent make_failed(std::exception_ptr error) {
    CompletionEvent e = make_pending(0);
    e.set_failed(std::move(error));
    return e;
  }

  std::uint64_t id() const noexcept { return state_ ? state_->id : 0; }

  EventState state() const {
    if (!state_) return EventState::done;
    std::lock_guard lock(state_->mutex);
    return state_->state;
  }

  bool ready() const { return state() != EventState::pending; }

  // Blocks until the event leaves pending; rethrows the original error when
  // the operation failed. Safe to call any number of times.
  void wait() const {
    if (!state_) return;
    std::unique_lock lock(state_->mutex);
    state_->cv.wait(lock, [&] { return state_->state != EventState::pending; });
    if (state_->state == EventState::failed) std::rethrow_exception(state_->error);
  }

  std::exception_ptr error() const {
    if (!state_) return nullptr;
    std::lock_guard lock(state_->mutex);
    return state_->error;
  }

  void set_done() { transition(EventState::done, nullptr); }
  void set_failed(std::exception_ptr error) { transition(EventState::failed, std::move(error)); }

  bool same_as(const CompletionEvent& other) const noexcept { return state_ == other.state_; }

 private:
  struct Shared {
    std::mutex mutex;
    std::condition_variable cv;
    EventState state = EventState::pending;
    std::exception_ptr error;
    std::uint64_t id = 0;
  };

  void transition(EventState next, std::exception_ptr error) {
    if (!state_) return;
    {
      std::lock_guard lock(state_->mutex);
      if (state_->state != EventState::pending) return;
      state_->state = next;
      state_->error = std::move(error);
    }
    state_->cv.notify_all();
  }

  std::shared_ptr<Shared> state_;
};

}  // namespace tensorforge::backend
