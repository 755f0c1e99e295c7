#include "tensorforge/tensor/tensor.hpp"

#include <cstring>

#include "tensorforge/error.hpp"
#include "tensorforge/tensor/engine.hpp"

namespace tensorforge {

std::size_t element_bytes(DType dtype) noexcept { return dtype == DType::int8 ? 1 : 4; }

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::int64_t element_count(const Shape& shape) noexcept {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::int64_t layout_map(const Shape& shape, std::span<const std::int64_t> index) {
  require(index.size() == shape.size(), ErrorKind::bounds,
          "index rank " + std::to_string(index.size()) + " does not match shape " + to_string(shape));
  std::int64_t offset = 0;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    require(index[d] >= 0 && index[d] < shape[d], ErrorKind::bounds,
            "index " + std::to_string(index[d]) + " out of range on axis " + std::to_string(d) + " of " +
                to_string(shape));
    const std::int64_t extent = d + 1 == shape.size() ? padded_extent(shape[d]) : shape[d];
    offset = offset * extent + index[d];
  }
  return offset;
}

namespace detail {

Storage::~Storage() {
  if (released || buffer.empty()) return;
  try {
    device->pool->release_after(buffer, hazards());
  } catch (...) {
    // destructors stay silent; integrity errors surface on explicit release
  }
}

std::vector<backend::CompletionEvent> Storage::hazards() const {
  std::vector<backend::CompletionEvent> out;
  if (!last_write.ready() || last_write.state() == backend::EventState::failed) out.push_back(last_write);
  for (const auto& r : readers) {
    if (!r.ready()) out.push_back(r);
  }
  return out;
}

void Storage::add_reader(const backend::CompletionEvent& e) {
  std::erase_if(readers, [](const backend::CompletionEvent& r) { return r.ready(); });
  readers.push_back(e);
}

std::size_t Storage::release_now() {
  if (released) return 0;
  for (const auto& e : hazards()) {
    try {
      e.wait();
    } catch (...) {
    }
  }
  released = true;
  readers.clear();
  last_write = {};
  if (buffer.empty()) return 0;
  device->pool->release(buffer);
  return buffer.capacity_bytes;
}

}  // namespace detail

namespace {

detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  require(impl != nullptr, ErrorKind::invalid_handle, "use of an undefined tensor");
  return *impl;
}

}  // namespace

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::int64_t Tensor::dim(int axis) const {
  const Shape& s = shape();
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, ErrorKind::bounds, "axis out of range for " + to_string(s));
  return s[static_cast<std::size_t>(axis)];
}

DType Tensor::dtype() const { return checked(impl_).dtype; }
std::int64_t Tensor::numel() const { return element_count(shape()); }
std::int64_t Tensor::physical_last() const { return shape().empty() ? 0 : padded_extent(shape().back()); }

std::int64_t Tensor::physical_elements() const { return matrix().physical_elements(); }

std::size_t Tensor::physical_bytes() const {
  return static_cast<std::size_t>(physical_elements()) * element_bytes(dtype());
}

backend::MatShape Tensor::matrix() const {
  const Shape& s = shape();
  const std::int64_t cols = s.empty() ? 0 : s.back();
  std::int64_t rows = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
  return {rows, cols};
}

backend::Nhwc Tensor::nhwc() const {
  const Shape& s = shape();
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  if (s.size() == 2) return {s[0], 1, 1, s[1]};
  fail(ErrorKind::shape, "expected an NHWC or [N,C] tensor, got " + to_string(s));
}

Engine& Tensor::engine() const { return *checked(impl_).engine; }

detail::Storage& Tensor::live_storage(const char* what) const {
  auto& impl = checked(impl_);
  if (impl.overwritten) {
    fail(ErrorKind::graph, std::string(what) + ": tensor " + to_string(impl.shape) +
                               " was overwritten by an in-place operator");
  }
  require(!impl.deleted && impl.storage && !impl.storage->released, ErrorKind::invalid_handle,
          std::string(what) + ": tensor " + to_string(impl.shape) + " has been deleted");
  return *impl.storage;
}

const Tensor& Tensor::await() const {
  live_storage("await").last_write.wait();
  return *this;
}

backend::EventState Tensor::state() const { return live_storage("state").last_write.state(); }

std::vector<float> Tensor::to_host_physical() const {
  require(dtype() == DType::float32, ErrorKind::argument, "to_host: tensor is int8");
  auto& st = live_storage("to_host");
  st.last_write.wait();
  std::vector<float> out(static_cast<std::size_t>(physical_elements()));
  engine().backend().read(st.buffer, 0, std::as_writable_bytes(std::span<float>(out)));
  return out;
}

std::vector<float> Tensor::to_host() const {
  const std::vector<float> phys = to_host_physical();
  const backend::MatShape m = matrix();
  std::vector<float> out(static_cast<std::size_t>(m.rows * m.cols));
  for (std::int64_t r = 0; r < m.rows; ++r) {
    std::memcpy(out.data() + r * m.cols, phys.data() + r * m.ld(), static_cast<std::size_t>(m.cols) * sizeof(float));
  }
  return out;
}

std::vector<std::uint8_t> Tensor::to_host_bytes() const {
  require(dtype() == DType::int8, ErrorKind::argument, "to_host_bytes: tensor is float32");
  auto& st = live_storage("to_host_bytes");
  st.last_write.wait();
  std::vector<std::uint8_t> phys(physical_bytes());
  engine().backend().read(st.buffer, 0, std::as_writable_bytes(std::span<std::uint8_t>(phys)));
  const backend::MatShape m = matrix();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(m.rows * m.cols));
  for (std::int64_t r = 0; r < m.rows; ++r) {
    std::memcpy(out.data() + r * m.cols, phys.data() + r * m.ld(), static_cast<std::size_t>(m.cols));
  }
  return out;
}

float Tensor::item() const {
  require(numel() == 1, ErrorKind::shape, "item() needs a single-element tensor, got " + to_string(shape()));
  return to_host()[0];
}

std::size_t Tensor::release() const {
  auto& impl = checked(impl_);
  require(!impl.deleted, ErrorKind::invalid_handle, "tensor " + to_string(impl.shape) + " deleted twice");
  impl.deleted = true;
  if (impl.overwritten || !impl.storage) return 0;
  require(!impl.storage->released, ErrorKind::invalid_handle,
          "tensor " + to_string(impl.shape) + " released through another view");
  return impl.storage->release_now();
}

bool Tensor::released() const {
  auto& impl = checked(impl_);
  return impl.deleted || impl.overwritten || !impl.storage || impl.storage->released;
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::requires_grad(bool flag) {
  checked(impl_).requires_grad = flag;
  return *this;
}

bool Tensor::shares_storage(const Tensor& other) const {
  return impl_ && other.impl_ && impl_->storage && impl_->storage == other.impl_->storage;
}

}  // namespace tensorforge
