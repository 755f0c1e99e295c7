#pragma once

#include <atomic>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <unordered_map>

#include "tensorforge/backend/backend.hpp"

namespace tensorforge::backend {

// Reference backend: device memory is aligned host memory, streams are worker
// threads, kernels are the portable implementations in kernels.hpp.
class CpuBackend final : public Backend {
 public:
  explicit CpuBackend(BackendDescriptor descriptor = default_descriptor(),
                      std::size_t memory_limit = std::numeric_limits<std::size_t>::max());
  ~CpuBackend() override;

  static BackendDescriptor default_descriptor() { return {"cpu-reference", 64, 16}; }

  const BackendDescriptor& descriptor() const override { return descriptor_; }

  DeviceBuffer alloc(std::size_t bytes) override;
  void free(const DeviceBuffer& buffer) override;
  bool is_live(const DeviceBuffer& buffer) const override;
  AllocationStats allocation_stats() const override;
  void zero(const DeviceBuffer& buffer) override;

  void write(const DeviceBuffer& dst, std::size_t offset, std::span<const std::byte> src) override;
  void read(const DeviceBuffer& src, std::size_t offset, std::span<std::byte> dst) override;
  void copy_buffer(const DeviceBuffer& src, const DeviceBuffer& dst, std::size_t bytes) override;

  StreamId create_stream() override;
  void destroy_stream(StreamId stream) override;
  CompletionEvent enqueue(StreamId stream, Task task) override;
  void synchronize(StreamId stream) override;

  void gemm(const DeviceBuffer& a, MatShape a_shape, bool transpose_a, const DeviceBuffer& b, MatShape b_shape,
            bool transpose_b, const DeviceBuffer* bias, const DeviceBuffer& c) override;
  void conv2d_forward(const DeviceBuffer& x, const Nhwc& x_shape, const DeviceBuffer& w, const ConvDescriptor& desc,
                      const DeviceBuffer* bias, const DeviceBuffer& y, ConvAlgorithm algorithm) override;
  void conv2d_backward_data(const DeviceBuffer& dy, const Nhwc& dy_shape, const DeviceBuffer& w,
                            const ConvDescriptor& desc, const DeviceBuffer& dx, const Nhwc& dx_shape,
                            ConvAlgorithm algorithm) override;
  void conv2d_backward_filter(const DeviceBuffer& x, const Nhwc& x_shape, const DeviceBuffer& dy,
                              const Nhwc& dy_shape, const ConvDescriptor& desc, const DeviceBuffer& dw,
                              ConvAlgorithm algorithm) override;
  void batchnorm_forward(const DeviceBuffer& x, MatShape shape, const DeviceBuffer* gamma, const DeviceBuffer* beta,
                         const DeviceBuffer& running_mean, const DeviceBuffer& running_var, bool training,
                         BatchNormHyper hyper, const DeviceBuffer& y, const DeviceBuffer* saved_mean,
                         const DeviceBuffer* saved_inv_std) override;
  void batchnorm_backward(const DeviceBuffer& dy, const DeviceBuffer& x, bool x_is_normalized, MatShape shape,
                          const DeviceBuffer* gamma, const DeviceBuffer& saved_mean,
                          const DeviceBuffer& saved_inv_std, const DeviceBuffer& dx, const DeviceBuffer* dgamma,
                          const DeviceBuffer* dbeta) override;
  void maxpool2d_forward(const DeviceBuffer& x, const Nhwc& x_shape, const PoolDescriptor& desc,
                         const DeviceBuffer& y, const DeviceBuffer& argmax) override;
  void maxpool2d_backward(const DeviceBuffer& dy, const Nhwc& y_shape, const DeviceBuffer& argmax,
                          const DeviceBuffer& dx, const Nhwc& x_shape) override;
  void elementwise_unary(UnaryOp op, const DeviceBuffer& x, const DeviceBuffer* aux, MatShape shape,
                         const DeviceBuffer& y) override;
  void elementwise_binary(BinaryCode code, const DeviceBuffer& x1, const DeviceBuffer& x2, MatShape shape,
                          const DeviceBuffer& y) override;
  void accumulate(const DeviceBuffer& x, MatShape shape, const DeviceBuffer& y) override;
  void fill(const DeviceBuffer& y, MatShape shape, float value) override;
  void reduce_field_sum(const DeviceBuffer& x, MatShape shape, const DeviceBuffer& out) override;
  void softmax_crossentropy(const DeviceBuffer& logits, const DeviceBuffer& onehot, MatShape shape,
                            bool validate_labels, const DeviceBuffer& loss, const DeviceBuffer& dlogits) override;
  void adam_step(const DeviceBuffer& param, const DeviceBuffer& grad, const DeviceBuffer& m, const DeviceBuffer& v,
                 std::int64_t count, std::int64_t step, AdamHyper hyper) override;
  void sgd_step(const DeviceBuffer& param, const DeviceBuffer& grad, std::int64_t count, float lr) override;
  void uniform_fill(const DeviceBuffer& y, MatShape shape, float low, float high, std::uint64_t seed) override;

  // Host address of a live buffer after checking it holds `bytes`.
  std::byte* address(const DeviceBuffer& buffer, std::size_t bytes) const;

 private:
  struct Block {
    std::byte* data = nullptr;
    std::size_t capacity = 0;
  };

  float* floats(const DeviceBuffer& buffer, std::int64_t count) const;

  BackendDescriptor descriptor_;
  std::size_t memory_limit_;

  mutable std::mutex memory_mutex_;
  std::unordered_map<std::uint64_t, Block> blocks_;
  std::uint64_t next_handle_ = 1;
  AllocationStats stats_;

  std::mutex stream_mutex_;
  std::map<StreamId, std::unique_ptr<StreamQueue>> streams_;
  StreamId next_stream_ = 1;
  std::atomic<std::uint64_t> next_event_{1};
};

}  // namespace tensorforge::backend
