#include "tensorforge/backend/cpu_backend.hpp"

#include <cstring>
#include <new>
#include <string>

#include "tensorforge/backend/kernels.hpp"
#include "tensorforge/error.hpp"

namespace tensorforge::backend {

namespace {

constexpr std::size_t kFloat = sizeof(float);

std::size_t round_up(std::size_t bytes, std::size_t alignment) { return (bytes + alignment - 1) / alignment * alignment; }

void check_conv_geometry(const Nhwc& x, const ConvDescriptor& d) {
  require(d.kernel_h >= 1 && d.kernel_w >= 1 && d.stride_h >= 1 && d.stride_w >= 1 && d.pad_h >= 0 &&
              d.pad_w >= 0 && d.in_channels >= 1 && d.out_channels >= 1,
          ErrorKind::shape, "conv2d: invalid descriptor");
  require(x.c == d.in_channels, ErrorKind::shape, "conv2d: input channels do not match the descriptor");
  const Nhwc y = d.output_shape(x);
  require(x.n >= 0 && y.h >= 1 && y.w >= 1, ErrorKind::shape, "conv2d: non-positive output extent");
}

void check_pool_geometry(const Nhwc& x, const PoolDescriptor& d) {
  if (d.adaptive_target != 0) {
    require(d.adaptive_target >= 1, ErrorKind::shape, "maxpool2d: invalid adaptive target");
    require(x.h >= 1 && x.w >= 1, ErrorKind::shape, "maxpool2d: empty input");
    return;
  }
  require(d.window_h >= 1 && d.window_w >= 1 && d.stride_h >= 1 && d.stride_w >= 1 && d.pad_h >= 0 &&
              d.pad_w >= 0 && 2 * d.pad_h <= d.window_h && 2 * d.pad_w <= d.window_w,
          ErrorKind::shape, "maxpool2d: invalid window");
  const Nhwc y = d.output_shape(x);
  require(y.h >= 1 && y.w >= 1, ErrorKind::shape, "maxpool2d: non-positive output extent");
}

}  // namespace

CpuBackend::CpuBackend(BackendDescriptor descriptor, std::size_t memory_limit)
    : descriptor_(std::move(descriptor)), memory_limit_(memory_limit) {
  const std::size_t a = descriptor_.alignment_bytes;
  require(a >= 16 && (a & (a - 1)) == 0, ErrorKind::argument, "backend alignment must be a power of two >= 16");
  require(descriptor_.max_streams >= 1, ErrorKind::argument, "backend needs at least one stream");
}

CpuBackend::~CpuBackend() {
  {
    std::lock_guard lock(stream_mutex_);
    streams_.clear();
  }
  for (auto& [handle, block] : blocks_) ::operator delete(block.data, std::align_val_t(descriptor_.alignment_bytes));
}

DeviceBuffer CpuBackend::alloc(std::size_t bytes) {
  const std::size_t capacity = round_up(bytes, descriptor_.alignment_bytes);
  std::lock_guard lock(memory_mutex_);
  if (static_cast<std::size_t>(stats_.live_bytes) + capacity > memory_limit_) {
    fail(ErrorKind::allocation_failure, "device refused " + std::to_string(capacity) + " bytes");
  }
  std::byte* data = nullptr;
  if (capacity > 0) {
    try {
      data = static_cast<std::byte*>(::operator new(capacity, std::align_val_t(descriptor_.alignment_bytes)));
    } catch (const std::bad_alloc&) {
      fail(ErrorKind::allocation_failure, "host refused " + std::to_string(capacity) + " bytes");
    }
    std::memset(data, 0, capacity);
  }
  const std::uint64_t handle = next_handle_++;
  blocks_.emplace(handle, Block{data, capacity});
  ++stats_.live_buffers;
  stats_.live_bytes += static_cast<std::int64_t>(capacity);
  ++stats_.total_allocs;
  return DeviceBuffer{handle, capacity, 0};
}

void CpuBackend::free(const DeviceBuffer& buffer) {
  std::lock_guard lock(memory_mutex_);
  auto it = blocks_.find(buffer.handle);
  require(it != blocks_.end(), ErrorKind::invalid_handle, "free of unknown or released buffer " + std::to_string(buffer.handle));
  ::operator delete(it->second.data, std::align_val_t(descriptor_.alignment_bytes));
  --stats_.live_buffers;
  stats_.live_bytes -= static_cast<std::int64_t>(it->second.capacity);
  ++stats_.total_frees;
  blocks_.erase(it);
}

bool CpuBackend::is_live(const DeviceBuffer& buffer) const {
  std::lock_guard lock(memory_mutex_);
  return blocks_.count(buffer.handle) != 0;
}

AllocationStats CpuBackend::allocation_stats() const {
  std::lock_guard lock(memory_mutex_);
  return stats_;
}

std::byte* CpuBackend::address(const DeviceBuffer& buffer, std::size_t bytes) const {
  std::lock_guard lock(memory_mutex_);
  auto it = blocks_.find(buffer.handle);
  require(it != blocks_.end(), ErrorKind::invalid_handle, "access to unknown or released buffer " + std::to_string(buffer.handle));
  if (bytes > it->second.capacity) {
    fail(ErrorKind::shape, "buffer " + std::to_string(buffer.handle) + " holds " + std::to_string(it->second.capacity) +
                               " bytes, kernel geometry needs " + std::to_string(bytes));
  }
  return it->second.data;
}

float* CpuBackend::floats(const DeviceBuffer& buffer, std::int64_t count) const {
  return reinterpret_cast<float*>(address(buffer, static_cast<std::size_t>(count) * kFloat));
}

namespace {

void require_length(std::initializer_list<const DeviceBuffer*> buffers, std::int64_t count, const char* op) {
  const auto bytes = static_cast<std::size_t>(count) * sizeof(float);
  for (const DeviceBuffer* b : buffers) {
    require(b->capacity_bytes >= bytes, ErrorKind::shape,
            std::string(op) + ": buffer of " + std::to_string(b->capacity_bytes) + " bytes is shorter than " +
                std::to_string(count) + " elements");
  }
}

}  // namespace

void CpuBackend::zero(const DeviceBuffer& buffer) {
  std::byte* p = address(buffer, 0);
  if (buffer.capacity_bytes > 0) std::memset(p, 0, buffer.capacity_bytes);
}

void CpuBackend::write(const DeviceBuffer& dst, std::size_t offset, std::span<const std::byte> src) {
  std::lock_guard lock(memory_mutex_);
  auto it = blocks_.find(dst.handle);
  require(it != blocks_.end(), ErrorKind::invalid_handle, "write to unknown or released buffer");
  require(offset + src.size() <= it->second.capacity, ErrorKind::bounds, "copy beyond destination capacity");
  if (!src.empty()) std::memcpy(it->second.data + offset, src.data(), src.size());
}

void CpuBackend::read(const DeviceBuffer& src, std::size_t offset, std::span<std::byte> dst) {
  std::lock_guard lock(memory_mutex_);
  auto it = blocks_.find(src.handle);
  require(it != blocks_.end(), ErrorKind::invalid_handle, "read from unknown or released buffer");
  require(offset + dst.size() <= it->second.capacity, ErrorKind::bounds, "copy beyond source capacity");
  if (!dst.empty()) std::memcpy(dst.data(), it->second.data + offset, dst.size());
}

void CpuBackend::copy_buffer(const DeviceBuffer& src, const DeviceBuffer& dst, std::size_t bytes) {
  std::lock_guard lock(memory_mutex_);
  auto s = blocks_.find(src.handle);
  auto d = blocks_.find(dst.handle);
  require(s != blocks_.end() && d != blocks_.end(), ErrorKind::invalid_handle, "copy between unknown buffers");
  require(bytes <= s->second.capacity && bytes <= d->second.capacity, ErrorKind::bounds, "copy beyond buffer capacity");
  if (bytes > 0) std::memmove(d->second.data, s->second.data, bytes);
}

StreamId CpuBackend::create_stream() {
  std::lock_guard lock(stream_mutex_);
  require(static_cast<int>(streams_.size()) < descriptor_.max_streams, ErrorKind::argument, "stream limit reached");
  const StreamId id = next_stream_++;
  streams_.emplace(id, std::make_unique<StreamQueue>(id));
  return id;
}

void CpuBackend::destroy_stream(StreamId stream) {
  std::unique_ptr<StreamQueue> victim;
  {
    std::lock_guard lock(stream_mutex_);
    auto it = streams_.find(stream);
    require(it != streams_.end(), ErrorKind::invalid_stream, "destroy of unknown stream " + std::to_string(stream));
    victim = std::move(it->second);
    streams_.erase(it);
  }
  // joins after finishing queued work
  victim.reset();
}

CompletionEvent CpuBackend::enqueue(StreamId stream, Task task) {
  std::lock_guard lock(stream_mutex_);
  auto it = streams_.find(stream);
  require(it != streams_.end(), ErrorKind::invalid_stream, "enqueue on unknown or destroyed stream " + std::to_string(stream));
  return it->second->enqueue(std::move(task), next_event_++);
}

void CpuBackend::synchronize(StreamId stream) {
  StreamQueue* queue = nullptr;
  {
    std::lock_guard lock(stream_mutex_);
    auto it = streams_.find(stream);
    require(it != streams_.end(), ErrorKind::invalid_stream, "synchronize on unknown stream " + std::to_string(stream));
    queue = it->second.get();
  }
  queue->drain();
}

void CpuBackend::gemm(const DeviceBuffer& a, MatShape as, bool ta, const DeviceBuffer& b, MatShape bs, bool tb,
                      const DeviceBuffer* bias, const DeviceBuffer& c) {
  const std::int64_t k_a = ta ? as.rows : as.cols;
  const std::int64_t k_b = tb ? bs.cols : bs.rows;
  require(k_a == k_b, ErrorKind::shape, "gemm: inner dimensions differ");
  const MatShape cs{ta ? as.cols : as.rows, tb ? bs.rows : bs.cols};
  const float* pa = floats(a, as.physical_elements());
  const float* pb = floats(b, bs.physical_elements());
  const float* pbias = bias ? floats(*bias, cs.ld()) : nullptr;
  kernels::gemm(pa, as, ta, pb, bs, tb, pbias, floats(c, cs.physical_elements()));
}

void CpuBackend::conv2d_forward(const DeviceBuffer& x, const Nhwc& xs, const DeviceBuffer& w,
                                const ConvDescriptor& desc, const DeviceBuffer* bias, const DeviceBuffer& y,
                                ConvAlgorithm algorithm) {
  check_conv_geometry(xs, desc);
  const Nhwc ys = desc.output_shape(xs);
  const float* px = floats(x, xs.physical_elements());
  const float* pw = floats(w, desc.filter_shape().physical_elements());
  const float* pb = bias ? floats(*bias, ys.cp()) : nullptr;
  float* py = floats(y, ys.physical_elements());
  if (algorithm == ConvAlgorithm::automatic) algorithm = kernels::resolve_conv_algorithm(desc, ys, conv_threshold());
  kernels::conv2d_forward(px, xs, pw, desc, pb, py, algorithm);
}

void CpuBackend::conv2d_backward_data(const DeviceBuffer& dy, const Nhwc& dys, const DeviceBuffer& w,
                                      const ConvDescriptor& desc, const DeviceBuffer& dx, const Nhwc& dxs,
                                      ConvAlgorithm algorithm) {
  check_conv_geometry(dxs, desc);
  require(desc.output_shape(dxs) == dys, ErrorKind::shape, "conv2d_backward_data: dy does not match the forward output");
  const float* pdy = floats(dy, dys.physical_elements());
  const float* pw = floats(w, desc.filter_shape().physical_elements());
  float* pdx = floats(dx, dxs.physical_elements());
  if (algorithm == ConvAlgorithm::automatic) algorithm = kernels::resolve_conv_algorithm(desc, dys, conv_threshold());
  kernels::conv2d_backward_data(pdy, dys, pw, desc, pdx, dxs, algorithm);
}

void CpuBackend::conv2d_backward_filter(const DeviceBuffer& x, const Nhwc& xs, const DeviceBuffer& dy,
                                        const Nhwc& dys, const ConvDescriptor& desc, const DeviceBuffer& dw,
                                        ConvAlgorithm algorithm) {
  check_conv_geometry(xs, desc);
  require(desc.output_shape(xs) == dys, ErrorKind::shape, "conv2d_backward_filter: dy does not match the forward output");
  const float* px = floats(x, xs.physical_elements());
  const float* pdy = floats(dy, dys.physical_elements());
  float* pdw = floats(dw, desc.filter_shape().physical_elements());
  if (algorithm == ConvAlgorithm::automatic) algorithm = kernels::resolve_conv_algorithm(desc, dys, conv_threshold());
  kernels::conv2d_backward_filter(px, xs, pdy, dys, desc, pdw, algorithm);
}

void CpuBackend::batchnorm_forward(const DeviceBuffer& x, MatShape shape, const DeviceBuffer* gamma,
                                   const DeviceBuffer* beta, const DeviceBuffer& running_mean,
                                   const DeviceBuffer& running_var, bool training, BatchNormHyper hyper,
                                   const DeviceBuffer& y, const DeviceBuffer* saved_mean,
                                   const DeviceBuffer* saved_inv_std) {
  require(hyper.eps > 0.0f, ErrorKind::argument, "batchnorm: eps must be positive");
  const std::int64_t cc = padded_extent(shape.cols);
  const float* px = floats(x, shape.physical_elements());
  const float* pg = gamma ? floats(*gamma, cc) : nullptr;
  const float* pb = beta ? floats(*beta, cc) : nullptr;
  float* rm = floats(running_mean, cc);
  float* rv = floats(running_var, cc);
  float* py = floats(y, shape.physical_elements());
  if (training) {
    require(saved_mean != nullptr && saved_inv_std != nullptr, ErrorKind::argument,
            "batchnorm: training mode needs saved statistics buffers");
    kernels::batchnorm_forward_train(px, shape, pg, pb, rm, rv, hyper, py, floats(*saved_mean, cc),
                                     floats(*saved_inv_std, cc));
  } else {
    kernels::batchnorm_forward_infer(px, shape, pg, pb, rm, rv, hyper.eps, py);
  }
}

void CpuBackend::batchnorm_backward(const DeviceBuffer& dy, const DeviceBuffer& x, bool x_is_normalized,
                                    MatShape shape, const DeviceBuffer* gamma, const DeviceBuffer& saved_mean,
                                    const DeviceBuffer& saved_inv_std, const DeviceBuffer& dx,
                                    const DeviceBuffer* dgamma, const DeviceBuffer* dbeta) {
  const std::int64_t cc = padded_extent(shape.cols);
  kernels::batchnorm_backward(floats(dy, shape.physical_elements()), floats(x, shape.physical_elements()),
                              x_is_normalized, shape, gamma ? floats(*gamma, cc) : nullptr, floats(saved_mean, cc),
                              floats(saved_inv_std, cc), floats(dx, shape.physical_elements()),
                              dgamma ? floats(*dgamma, cc) : nullptr, dbeta ? floats(*dbeta, cc) : nullptr);
}

void CpuBackend::maxpool2d_forward(const DeviceBuffer& x, const Nhwc& xs, const PoolDescriptor& desc,
                                   const DeviceBuffer& y, const DeviceBuffer& argmax) {
  check_pool_geometry(xs, desc);
  const Nhwc ys = desc.output_shape(xs);
  auto* idx = reinterpret_cast<std::int64_t*>(
      address(argmax, static_cast<std::size_t>(ys.positions() * ys.c) * sizeof(std::int64_t)));
  kernels::maxpool2d_forward(floats(x, xs.physical_elements()), xs, desc, floats(y, ys.physical_elements()), idx);
}

void CpuBackend::maxpool2d_backward(const DeviceBuffer& dy, const Nhwc& ys, const DeviceBuffer& argmax,
                                    const DeviceBuffer& dx, const Nhwc& xs) {
  require(ys.n == xs.n && ys.c == xs.c && ys.h >= 1 && ys.w >= 1, ErrorKind::shape,
          "maxpool2d_backward: output shape does not match input shape");
  const auto* idx = reinterpret_cast<const std::int64_t*>(
      address(argmax, static_cast<std::size_t>(ys.positions() * ys.c) * sizeof(std::int64_t)));
  const std::int64_t limit = xs.positions() * xs.c;
  for (std::int64_t i = 0, e = ys.positions() * ys.c; i < e; ++i) {
    require(idx[i] < limit, ErrorKind::shape, "maxpool2d_backward: argmax index outside the input shape");
  }
  kernels::maxpool2d_backward(floats(dy, ys.physical_elements()), ys, idx, floats(dx, xs.physical_elements()), xs);
}

void CpuBackend::elementwise_unary(UnaryOp op, const DeviceBuffer& x, const DeviceBuffer* aux, MatShape shape,
                                   const DeviceBuffer& y) {
  require(!op.needs_aux() || aux != nullptr, ErrorKind::argument, "backward activation needs the forward output");
  const void* px = op.code == UnaryCode::pix2float
                       ? static_cast<const void*>(address(x, static_cast<std::size_t>(shape.physical_elements())))
                       : static_cast<const void*>(floats(x, shape.physical_elements()));
  const float* pa = op.needs_aux() ? floats(*aux, shape.physical_elements()) : nullptr;
  kernels::elementwise_unary(op, px, pa, shape, floats(y, shape.physical_elements()));
}

void CpuBackend::elementwise_binary(BinaryCode code, const DeviceBuffer& x1, const DeviceBuffer& x2,
                                    MatShape shape, const DeviceBuffer& y) {
  const std::int64_t n = shape.physical_elements();
  kernels::elementwise_binary(code, floats(x1, n), floats(x2, n), shape, floats(y, n));
}

void CpuBackend::accumulate(const DeviceBuffer& x, MatShape shape, const DeviceBuffer& y) {
  const std::int64_t n = shape.physical_elements();
  kernels::accumulate(floats(x, n), shape, floats(y, n));
}

void CpuBackend::fill(const DeviceBuffer& y, MatShape shape, float value) {
  kernels::fill(floats(y, shape.physical_elements()), shape, value);
}

void CpuBackend::reduce_field_sum(const DeviceBuffer& x, MatShape shape, const DeviceBuffer& out) {
  kernels::reduce_field_sum(floats(x, shape.physical_elements()), shape, floats(out, shape.ld()));
}

void CpuBackend::softmax_crossentropy(const DeviceBuffer& logits, const DeviceBuffer& onehot, MatShape shape,
                                      bool validate_labels, const DeviceBuffer& loss, const DeviceBuffer& dlogits) {
  const std::int64_t n = shape.physical_elements();
  const bool ok = kernels::softmax_crossentropy(floats(logits, n), floats(onehot, n), shape, validate_labels,
                                                floats(loss, 4), floats(dlogits, n));
  require(ok, ErrorKind::label, "softmax_crossentropy: every label row must be one-hot");
}

void CpuBackend::adam_step(const DeviceBuffer& param, const DeviceBuffer& grad, const DeviceBuffer& m,
                           const DeviceBuffer& v, std::int64_t count, std::int64_t step, AdamHyper hyper) {
  require(step >= 1, ErrorKind::argument, "adam: step count starts at 1");
  require_length({&param, &grad, &m, &v}, count, "adam");
  kernels::adam_step(floats(param, count), floats(grad, count), floats(m, count), floats(v, count), count, step,
                     hyper);
}

void CpuBackend::sgd_step(const DeviceBuffer& param, const DeviceBuffer& grad, std::int64_t count, float lr) {
  require_length({&param, &grad}, count, "sgd");
  kernels::sgd_step(floats(param, count), floats(grad, count), count, lr);
}

void CpuBackend::uniform_fill(const DeviceBuffer& y, MatShape shape, float low, float high, std::uint64_t seed) {
  require(low <= high, ErrorKind::argument, "uniform_fill: low exceeds high");
  kernels::uniform_fill(floats(y, shape.physical_elements()), shape, low, high, seed);
}

// -- asynchronous copies ------------------------------------------------------

CompletionEvent Backend::copy_to_device(std::span<const std::byte> src, const DeviceBuffer& dst, std::size_t bytes,
                                        StreamId stream) {
  require(bytes <= src.size() && bytes <= dst.capacity_bytes, ErrorKind::bounds, "copy beyond buffer capacity");
  return enqueue(stream, [this, src, dst, bytes] { write(dst, 0, src.first(bytes)); });
}

CompletionEvent Backend::copy_to_host(const DeviceBuffer& src, std::span<std::byte> dst, std::size_t bytes,
                                      StreamId stream) {
  require(bytes <= dst.size() && bytes <= src.capacity_bytes, ErrorKind::bounds, "copy beyond buffer capacity");
  return enqueue(stream, [this, src, dst, bytes] { read(src, 0, dst.first(bytes)); });
}

CompletionEvent Backend::copy(const DeviceBuffer& src, const DeviceBuffer& dst, std::size_t bytes, StreamId stream) {
  require(bytes <= src.capacity_bytes && bytes <= dst.capacity_bytes, ErrorKind::bounds, "copy beyond buffer capacity");
  return enqueue(stream, [this, src, dst, bytes] { copy_buffer(src, dst, bytes); });
}

}  // namespace tensorforge::backend
