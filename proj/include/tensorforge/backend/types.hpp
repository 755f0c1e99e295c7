#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace tensorforge {

// Physical extent of a last dimension: logical extent rounded up to 4 lanes
// (one 128-bit access unit of float32).
constexpr std::int64_t padded_extent(std::int64_t logical) noexcept { return (logical + 3) / 4 * 4; }

namespace backend {

struct BackendDescriptor {
  std::string name;
  std::size_t alignment_bytes = 64;
  int max_streams = 16;
};

// Opaque handle to a device allocation. handle == 0 denotes the empty buffer.
struct DeviceBuffer {
  std::uint64_t handle = 0;
  std::size_t capacity_bytes = 0;
  int device_id = 0;

  bool empty() const noexcept { return handle == 0; }
  friend bool operator==(const DeviceBuffer&, const DeviceBuffer&) = default;
};

using StreamId = int;

// Row-major matrix with a 4-padded row stride; every tensor of rank >= 1 can
// be viewed this way with rows = product of leading extents.
struct MatShape {
  std::int64_t rows = 0;
  std::int64_t cols = 0;

  std::int64_t ld() const noexcept { return padded_extent(cols); }
  std::int64_t physical_elements() const noexcept { return rows * ld(); }
  friend bool operator==(const MatShape&, const MatShape&) = default;
};

struct Nhwc {
  std::int64_t n = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t c = 0;

  std::int64_t cp() const noexcept { return padded_extent(c); }
  std::int64_t positions() const noexcept { return n * h * w; }
  std::int64_t physical_elements() const noexcept { return positions() * cp(); }
  MatShape as_matrix() const noexcept { return {positions(), c}; }
  friend bool operator==(const Nhwc&, const Nhwc&) = default;
};

enum class ConvAlgorithm { automatic, general_im2col, small_feature_direct };

struct ConvDescriptor {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  std::int64_t stride_h = 1;
  std::int64_t stride_w = 1;
  std::int64_t pad_h = 0;
  std::int64_t pad_w = 0;
  ConvAlgorithm algorithm = ConvAlgorithm::automatic;

  static ConvDescriptor square(std::int64_t in_c, std::int64_t out_c, std::int64_t kernel,
                               std::int64_t stride, std::int64_t pad) {
    return {in_c, out_c, kernel, kernel, stride, stride, pad, pad, ConvAlgorithm::automatic};
  }

  // Output extent along one axis; <= 0 means the configuration is invalid.
  static std::int64_t out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                 std::int64_t pad) noexcept {
    if (stride <= 0) return 0;
    const std::int64_t span = in + 2 * pad - kernel;
    if (span < 0) return 0;
    return span / stride + 1;
  }

  Nhwc output_shape(const Nhwc& x) const noexcept {
    return {x.n, out_extent(x.h, kernel_h, stride_h, pad_h), out_extent(x.w, kernel_w, stride_w, pad_w),
            out_channels};
  }

  // Filters are stored [out_c, kh, kw, in_c]; the row length is kh*kw*pad4(in_c).
  Nhwc filter_shape() const noexcept { return {out_channels, kernel_h, kernel_w, in_channels}; }
};

struct PoolDescriptor {
  std::int64_t window_h = 1;
  std::int64_t window_w = 1;
  std::int64_t stride_h = 1;
  std::int64_t stride_w = 1;
  std::int64_t pad_h = 0;
  std::int64_t pad_w = 0;
  // When > 0 the window/stride fields are ignored and output extents equal
  // this target on both spatial axes.
  std::int64_t adaptive_target = 0;

  Nhwc output_shape(const Nhwc& x) const noexcept {
    if (adaptive_target > 0) return {x.n, adaptive_target, adaptive_target, x.c};
    return {x.n, ConvDescriptor::out_extent(x.h, window_h, stride_h, pad_h),
            ConvDescriptor::out_extent(x.w, window_w, stride_w, pad_w), x.c};
  }
};

enum class UnaryCode { leaky_relu_fwd, leaky_relu_bwd, sigmoid_fwd, sigmoid_bwd, scale, pix2float };

struct UnaryOp {
  UnaryCode code = UnaryCode::scale;
  // slope for leaky_relu, factor for scale
  float k = 1.0f;

  bool needs_aux() const noexcept { return code == UnaryCode::leaky_relu_bwd || code == UnaryCode::sigmoid_bwd; }
};

enum class BinaryCode { add, mul };

struct AdamHyper {
  float lr = 0.01f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct BatchNormHyper {
  float eps = 1e-8f;
  float momentum = 0.1f;
};

}  // namespace backend
}  // namespace tensorforge
