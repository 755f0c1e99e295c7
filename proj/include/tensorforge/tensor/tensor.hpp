#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tensorforge/backend/event.hpp"
#include "tensorforge/backend/types.hpp"

namespace tensorforge {

class Engine;

namespace autograd {
class Graph;
}

enum class DType { float32, int8 };

std::size_t element_bytes(DType dtype) noexcept;

using Shape = std::vector<std::int64_t>;

std::string to_string(const Shape& shape);
std::int64_t element_count(const Shape& shape) noexcept;

// Row-major offset of a logical index with the last stride replaced by the
// padded extent. Raises a bounds error for out-of-range indices.
std::int64_t layout_map(const Shape& shape, std::span<const std::int64_t> index);

namespace detail {

struct DeviceContext;

// A pooled device buffer plus the operations still touching it. Shared by a
// tensor and its zero-copy views.
struct Storage {
  std::shared_ptr<DeviceContext> device;
  backend::DeviceBuffer buffer;
  backend::CompletionEvent last_write;
  std::vector<backend::CompletionEvent> readers;
  bool released = false;

  Storage(std::shared_ptr<DeviceContext> d, backend::DeviceBuffer b) : device(std::move(d)), buffer(b) {}
  ~Storage();
  Storage(const Storage&) = delete;
  Storage& operator=(const Storage&) = delete;

  // All events an overwrite of this buffer must wait for.
  std::vector<backend::CompletionEvent> hazards() const;
  void add_reader(const backend::CompletionEvent& e);
  // Waits for in-flight work (errors are swallowed) and returns the buffer to
  // the pool. Returns the bytes handed back; 0 when already released.
  std::size_t release_now();
};

// Where a tensor came from inside a recorded forward pass.
struct Route {
  std::weak_ptr<autograd::Graph> graph;
  std::uint64_t pass = 0;
  std::int64_t node = -1;  // -1: not produced by a node of that pass
  std::int64_t slot = 0;
};

struct TensorImpl {
  Engine* engine = nullptr;
  Shape shape;
  DType dtype = DType::float32;
  std::shared_ptr<Storage> storage;
  // set when an in-place operator took over the storage
  bool overwritten = false;
  bool deleted = false;
  bool requires_grad = false;
  // gradient produced inside a backward pass and referenced nowhere else
  bool exclusive_grad = false;
  Route route;
};

}  // namespace detail

// Handle to a logically shaped, physically 4-padded array on a device. Copies
// share the underlying tensor. All reads first wait for the producing
// operation; a failed producer surfaces its original error.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  bool defined() const noexcept { return impl_ != nullptr; }
  explicit operator bool() const noexcept { return defined(); }

  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  std::size_t rank() const { return shape().size(); }
  DType dtype() const;
  std::int64_t numel() const;
  std::int64_t physical_last() const;
  std::int64_t physical_elements() const;
  std::size_t physical_bytes() const;

  // [rows, last] view used by row-wise kernels.
  backend::MatShape matrix() const;
  // 4D tensors as-is; 2D [N,C] as [N,1,1,C].
  backend::Nhwc nhwc() const;

  Engine& engine() const;

  // Blocks until the producing operation finished ("Tensor.c").
  const Tensor& await() const;
  backend::EventState state() const;

  std::vector<float> to_host() const;
  std::vector<std::uint8_t> to_host_bytes() const;
  // Physical contents including pad lanes.
  std::vector<float> to_host_physical() const;
  float item() const;

  // Explicit release: waits for in-flight work and returns the buffer to the
  // pool. Deleting twice raises an invalid-handle error.
  std::size_t release() const;
  bool released() const;

  bool requires_grad() const;
  Tensor& requires_grad(bool flag);

  bool same_as(const Tensor& other) const noexcept { return impl_ == other.impl_; }
  bool shares_storage(const Tensor& other) const;

  detail::TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const noexcept { return impl_; }

  // Storage after liveness checks: invalid-handle when released, graph error
  // when an in-place operator has overwritten it.
  detail::Storage& live_storage(const char* what) const;

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

}  // namespace tensorforge
