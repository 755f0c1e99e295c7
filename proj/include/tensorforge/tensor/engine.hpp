#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tensorforge/backend/backend.hpp"
#include "tensorforge/core/memory_pool.hpp"
#include "tensorforge/core/staging_cache.hpp"
#include "tensorforge/tensor/tensor.hpp"

namespace tensorforge {

struct EngineFlags {
  bool sync = true;
  bool check = true;
};

struct EngineOptions {
  std::size_t staging_bytes = core::StagingCache::kDefaultCapacity;
  bool zero_on_acquire = true;
  std::int64_t conv_threshold = 64;
};

namespace detail {

// Backend, pool and staging slots; kept alive by every storage so tensors may
// outlive the Engine object without dangling.
struct DeviceContext {
  std::unique_ptr<backend::Backend> backend;
  std::unique_ptr<core::MemoryPool> pool;
  std::unique_ptr<core::StagingCache> staging;
  ~DeviceContext();
};

}  // namespace detail

struct BatchNormOutputs {
  Tensor y;
  Tensor saved_mean;
  Tensor saved_inv_std;
};

struct BatchNormGrads {
  Tensor dx;
  Tensor dgamma;  // undefined unless requested
  Tensor dbeta;
};

struct PoolOutputs {
  Tensor y;
  // flat logical input index per output element
  std::shared_ptr<detail::Storage> argmax;
};

struct LossOutputs {
  Tensor loss;  // shape [1]
  Tensor dlogits;
};

// Layer-4 engine: creates tensors on pooled device memory and submits
// operators. In sync mode operators run inline and return finished tensors;
// otherwise they are enqueued on the current stream and return at once with
// pending tensors. Check mode runs parameter validation before submission.
class Engine {
 public:
  explicit Engine(std::unique_ptr<backend::Backend> backend = nullptr, EngineOptions options = {});
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  backend::Backend& backend() const noexcept { return *device_->backend; }
  core::MemoryPool& pool() const noexcept { return *device_->pool; }
  core::StagingCache& staging() const noexcept { return *device_->staging; }

  EngineFlags flags() const noexcept { return flags_; }
  Engine& sync(bool on) noexcept;
  Engine& check(bool on) noexcept;
  Engine& set_flags(bool sync_on, bool check_on) noexcept;

  std::int64_t conv_threshold() const noexcept { return conv_threshold_; }
  Engine& set_conv_threshold(std::int64_t threshold);

  // In-place execution of eligible operators inside recorded passes.
  bool in_place_enabled() const noexcept { return in_place_; }
  Engine& set_in_place(bool on) noexcept;
  // Release saved activations as soon as backward no longer needs them.
  bool eager_release() const noexcept { return eager_release_; }
  Engine& set_eager_release(bool on) noexcept;

  backend::StreamId default_stream() const noexcept { return default_stream_; }
  backend::StreamId current_stream() const noexcept { return current_stream_; }
  backend::StreamId create_stream();
  void use_stream(backend::StreamId stream);
  // Waits for every operation submitted on every stream of this engine.
  void synchronize();

  // -- creation -------------------------------------------------------------
  Tensor empty(const Shape& shape, DType dtype = DType::float32);
  Tensor zeros(const Shape& shape) { return empty(shape); }
  Tensor full(const Shape& shape, float value);
  Tensor from_host(std::span<const float> values, const Shape& shape);
  Tensor from_host_bytes(std::span<const std::uint8_t> values, const Shape& shape);
  // Overwrites an existing float32 tensor with logical values.
  void assign(const Tensor& t, std::span<const float> values);
  Tensor uniform(const Shape& shape, float low, float high, std::uint64_t seed);
  void uniform_fill(const Tensor& t, float low, float high, std::uint64_t seed);
  Tensor copy(const Tensor& t);
  Tensor to_float(const Tensor& t);
  // Zero-copy when the padded layouts coincide, else a repacked tensor.
  Tensor reshape(const Tensor& t, const Shape& shape);

  // -- compute --------------------------------------------------------------
  Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false,
                const Tensor* bias = nullptr);
  Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const backend::ConvDescriptor& desc);
  Tensor conv2d_backward_data(const Tensor& dy, const Tensor& w, const backend::ConvDescriptor& desc,
                              const Shape& x_shape);
  Tensor conv2d_backward_filter(const Tensor& x, const Tensor& dy, const backend::ConvDescriptor& desc);

  // gamma / beta may be null. With in_place the result overwrites x.
  BatchNormOutputs batchnorm_train(const Tensor& x, const Tensor* gamma, const Tensor* beta,
                                   const Tensor& running_mean, const Tensor& running_var,
                                   backend::BatchNormHyper hyper, bool in_place = false);
  Tensor batchnorm_infer(const Tensor& x, const Tensor* gamma, const Tensor* beta, const Tensor& running_mean,
                         const Tensor& running_var, float eps);
  // `x` is the forward input, or its normalized form when x_is_normalized.
  // With in_place dx overwrites dy.
  BatchNormGrads batchnorm_backward(const Tensor& dy, const Tensor& x, bool x_is_normalized, const Tensor* gamma,
                                    const Tensor& saved_mean, const Tensor& saved_inv_std, bool param_grads,
                                    bool in_place = false);

  PoolOutputs maxpool2d(const Tensor& x, const backend::PoolDescriptor& desc);
  Tensor maxpool2d_backward(const Tensor& dy, const std::shared_ptr<detail::Storage>& argmax,
                            const Shape& x_shape);

  Tensor unary(backend::UnaryOp op, const Tensor& x, const Tensor* aux = nullptr, bool in_place = false);
  Tensor leaky_relu(const Tensor& x, float k = 0.01f, bool in_place = false);
  Tensor leaky_relu_backward(const Tensor& dy, const Tensor& y, float k = 0.01f, bool in_place = false);
  Tensor sigmoid(const Tensor& x, bool in_place = false);
  Tensor sigmoid_backward(const Tensor& dy, const Tensor& y, bool in_place = false);
  Tensor scale(const Tensor& x, float factor);

  Tensor binary(backend::BinaryCode code, const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b) { return binary(backend::BinaryCode::add, a, b); }
  Tensor mul(const Tensor& a, const Tensor& b) { return binary(backend::BinaryCode::mul, a, b); }
  // into += x
  void accumulate(const Tensor& x, const Tensor& into);
  void fill(const Tensor& t, float value);
  // per-channel sum over every non-channel index; shape [C]
  Tensor field_sum(const Tensor& x);

  LossOutputs softmax_crossentropy(const Tensor& logits, const Tensor& onehot);

  void adam_step(const Tensor& param, const Tensor& grad, const Tensor& m, const Tensor& v, std::int64_t step,
                 backend::AdamHyper hyper);
  void sgd_step(const Tensor& param, const Tensor& grad, float lr);

  // Submits `kernel` after every pending writer of `reads` and every pending
  // reader or writer of `writes`. Exposed for custom operators.
  void launch(const std::vector<detail::Storage*>& reads, const std::vector<detail::Storage*>& writes,
              backend::Task kernel);

  // Fresh zeroed tensor of the given shape on pooled memory.
  Tensor make(const Shape& shape, DType dtype = DType::float32);
  std::shared_ptr<detail::Storage> make_storage(std::size_t bytes);

 private:
  Tensor adopt(const Tensor& source, const Shape& shape);
  void upload(const Tensor& t, std::span<const std::byte> physical);

  std::shared_ptr<detail::DeviceContext> device_;
  EngineFlags flags_;
  std::int64_t conv_threshold_;
  bool in_place_ = true;
  bool eager_release_ = true;
  backend::StreamId default_stream_ = 0;
  backend::StreamId current_stream_ = 0;
  std::vector<backend::StreamId> streams_;
};

}  // namespace tensorforge
