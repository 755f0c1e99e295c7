#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "tensorforge/backend/event.hpp"
#include "tensorforge/backend/stream.hpp"
#include "tensorforge/backend/types.hpp"

namespace tensorforge::backend {

struct AllocationStats {
  std::int64_t live_buffers = 0;
  std::int64_t live_bytes = 0;
  std::int64_t total_allocs = 0;
  std::int64_t total_frees = 0;
};

// Abstract device primitives. A concrete backend owns device memory and
// streams and implements every compute kernel; higher layers only ever see
// DeviceBuffer handles. Kernel primitives run synchronously on the calling
// thread; asynchrony comes from wrapping them in enqueue().
//
// Kernels validate buffer capacities against the shapes they are given and
// raise shape errors on inconsistent geometry, independently of the engine's
// parameter checks.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  // -- memory ---------------------------------------------------------------
  virtual DeviceBuffer alloc(std::size_t bytes) = 0;
  virtual void free(const DeviceBuffer& buffer) = 0;
  virtual bool is_live(const DeviceBuffer& buffer) const = 0;
  virtual AllocationStats allocation_stats() const = 0;
  virtual void zero(const DeviceBuffer& buffer) = 0;

  // Synchronous transfers.
  virtual void write(const DeviceBuffer& dst, std::size_t offset, std::span<const std::byte> src) = 0;
  virtual void read(const DeviceBuffer& src, std::size_t offset, std::span<std::byte> dst) = 0;
  virtual void copy_buffer(const DeviceBuffer& src, const DeviceBuffer& dst, std::size_t bytes) = 0;

  // -- streams --------------------------------------------------------------
  virtual StreamId create_stream() = 0;
  virtual void destroy_stream(StreamId stream) = 0;
  virtual CompletionEvent enqueue(StreamId stream, Task task) = 0;
  virtual void synchronize(StreamId stream) = 0;

  // Asynchronous copies ordered on `stream`.
  CompletionEvent copy_to_device(std::span<const std::byte> src, const DeviceBuffer& dst, std::size_t bytes,
                                 StreamId stream);
  CompletionEvent copy_to_host(const DeviceBuffer& src, std::span<std::byte> dst, std::size_t bytes,
                               StreamId stream);
  CompletionEvent copy(const DeviceBuffer& src, const DeviceBuffer& dst, std::size_t bytes, StreamId stream);

  // -- kernels --------------------------------------------------------------
  virtual void gemm(const DeviceBuffer& a, MatShape a_shape, bool transpose_a, const DeviceBuffer& b,
                    MatShape b_shape, bool transpose_b, const DeviceBuffer* bias, const DeviceBuffer& c) = 0;

  virtual void conv2d_forward(const DeviceBuffer& x, const Nhwc& x_shape, const DeviceBuffer& w,
                              const ConvDescriptor& desc, const DeviceBuffer* bias, const DeviceBuffer& y,
                              ConvAlgorithm algorithm) = 0;
  virtual void conv2d_backward_data(const DeviceBuffer& dy, const Nhwc& dy_shape, const DeviceBuffer& w,
                                    const ConvDescriptor& desc, const DeviceBuffer& dx, const Nhwc& dx_shape,
                                    ConvAlgorithm algorithm) = 0;
  virtual void conv2d_backward_filter(const DeviceBuffer& x, const Nhwc& x_shape, const DeviceBuffer& dy,
                                      const Nhwc& dy_shape, const ConvDescriptor& desc, const DeviceBuffer& dw,
                                      ConvAlgorithm algorithm) = 0;

  // gamma / beta may be null (identity affine).
  virtual void batchnorm_forward(const DeviceBuffer& x, MatShape shape, const DeviceBuffer* gamma,
                                 const DeviceBuffer* beta, const DeviceBuffer& running_mean,
                                 const DeviceBuffer& running_var, bool training, BatchNormHyper hyper,
                                 const DeviceBuffer& y, const DeviceBuffer* saved_mean,
                                 const DeviceBuffer* saved_inv_std) = 0;
  virtual void batchnorm_backward(const DeviceBuffer& dy, const DeviceBuffer& x, bool x_is_normalized,
                                  MatShape shape, const DeviceBuffer* gamma, const DeviceBuffer& saved_mean,
                                  const DeviceBuffer& saved_inv_std, const DeviceBuffer& dx,
                                  const DeviceBuffer* dgamma, const DeviceBuffer* dbeta) = 0;

  // argmax holds one int64 per logical output element.
  virtual void maxpool2d_forward(const DeviceBuffer& x, const Nhwc& x_shape, const PoolDescriptor& desc,
                                 const DeviceBuffer& y, const DeviceBuffer& argmax) = 0;
  virtual void maxpool2d_backward(const DeviceBuffer& dy, const Nhwc& y_shape, const DeviceBuffer& argmax,
                                  const DeviceBuffer& dx, const Nhwc& x_shape) = 0;

  virtual void elementwise_unary(UnaryOp op, const DeviceBuffer& x, const DeviceBuffer* aux, MatShape shape,
                                 const DeviceBuffer& y) = 0;
  virtual void elementwise_binary(BinaryCode code, const DeviceBuffer& x1, const DeviceBuffer& x2,
                                  MatShape shape, const DeviceBuffer& y) = 0;
  virtual void accumulate(const DeviceBuffer& x, MatShape shape, const DeviceBuffer& y) = 0;
  virtual void fill(const DeviceBuffer& y, MatShape shape, float value) = 0;
  virtual void reduce_field_sum(const DeviceBuffer& x, MatShape shape, const DeviceBuffer& out) = 0;

  // Raises a label error when validate_labels is set and a row is not one-hot.
  virtual void softmax_crossentropy(const DeviceBuffer& logits, const DeviceBuffer& onehot, MatShape shape,
                                    bool validate_labels, const DeviceBuffer& loss,
                                    const DeviceBuffer& dlogits) = 0;

  virtual void adam_step(const DeviceBuffer& param, const DeviceBuffer& grad, const DeviceBuffer& m,
                         const DeviceBuffer& v, std::int64_t count, std::int64_t step, AdamHyper hyper) = 0;
  virtual void sgd_step(const DeviceBuffer& param, const DeviceBuffer& grad, std::int64_t count, float lr) = 0;

  virtual void uniform_fill(const DeviceBuffer& y, MatShape shape, float low, float high,
                            std::uint64_t seed) = 0;

  // Small-feature dispatch threshold on output H*W for ConvAlgorithm::automatic.
  std::int64_t conv_threshold() const noexcept { return conv_threshold_; }
  void set_conv_threshold(std::int64_t threshold) noexcept { conv_threshold_ = threshold; }

 private:
  std::int64_t conv_threshold_ = 64;
};

}  // namespace tensorforge::backend
