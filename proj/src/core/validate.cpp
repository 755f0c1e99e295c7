#include "tensorforge/core/validate.hpp"

#include "tensorforge/error.hpp"

namespace tensorforge::core::validate {

namespace {

[[noreturn]] void reject(ErrorKind kind, std::string_view op, std::string_view arg, const std::string& constraint) {
  fail(kind, std::string(op) + ": argument '" + std::string(arg) + "' " + constraint);
}

std::string nhwc(const backend::Nhwc& s) { return describe({s.n, s.h, s.w, s.c}); }

}  // namespace

std::string describe(const Extents& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

void positive(std::string_view op, std::string_view arg, std::int64_t value) {
  if (value <= 0) reject(ErrorKind::shape, op, arg, "must be positive, got " + std::to_string(value));
}

void non_negative(std::string_view op, std::string_view arg, std::int64_t value) {
  if (value < 0) reject(ErrorKind::shape, op, arg, "must be non-negative, got " + std::to_string(value));
}

void rank(std::string_view op, std::string_view arg, const Extents& shape, std::size_t lo, std::size_t hi) {
  if (shape.size() < lo || shape.size() > hi) {
    reject(ErrorKind::shape, op, arg,
           "must have rank " + std::to_string(lo) + (lo == hi ? "" : ".." + std::to_string(hi)) + ", got " +
               describe(shape));
  }
}

void same_shape(std::string_view op, std::string_view arg_a, const Extents& a, std::string_view arg_b,
                const Extents& b) {
  if (a != b) {
    reject(ErrorKind::shape, op, arg_b,
           "must match '" + std::string(arg_a) + "' " + describe(a) + ", got " + describe(b));
  }
}

void equal_extent(std::string_view op, std::string_view arg, std::string_view what, std::int64_t expected,
                  std::int64_t got) {
  if (expected != got) {
    reject(ErrorKind::shape, op, arg,
           std::string(what) + " must be " + std::to_string(expected) + ", got " + std::to_string(got));
  }
}

void conv2d(std::string_view op, const backend::Nhwc& x, const backend::ConvDescriptor& d) {
  positive(op, "kernel_h", d.kernel_h);
  positive(op, "kernel_w", d.kernel_w);
  positive(op, "stride_h", d.stride_h);
  positive(op, "stride_w", d.stride_w);
  non_negative(op, "pad_h", d.pad_h);
  non_negative(op, "pad_w", d.pad_w);
  positive(op, "in_channels", d.in_channels);
  positive(op, "out_channels", d.out_channels);
  if (x.c != d.in_channels) {
    reject(ErrorKind::shape, op, "x",
           "channel mismatch: descriptor expects " + std::to_string(d.in_channels) + " input channels, x " +
               nhwc(x) + " has " + std::to_string(x.c));
  }
  const backend::Nhwc y = d.output_shape(x);
  if (y.h < 1 || y.w < 1) {
    reject(ErrorKind::shape, op, "x",
           "spatial extent " + std::to_string(x.h) + "x" + std::to_string(x.w) +
               " yields no output for kernel/stride/pad " + std::to_string(d.kernel_h) + "x" +
               std::to_string(d.kernel_w) + "/" + std::to_string(d.stride_h) + "/" + std::to_string(d.pad_h));
  }
}

void conv2d_filter(std::string_view op, const Extents& filter, const backend::ConvDescriptor& d) {
  const Extents expected{d.out_channels, d.kernel_h, d.kernel_w, d.in_channels};
  if (filter != expected) {
    reject(ErrorKind::shape, op, "w",
           "must be [out_c,kh,kw,in_c] = " + describe(expected) + ", got " + describe(filter));
  }
}

void conv2d_output(std::string_view op, std::string_view arg, const backend::Nhwc& x, const backend::Nhwc& y,
                   const backend::ConvDescriptor& d) {
  const backend::Nhwc expected = d.output_shape(x);
  if (!(expected == y)) {
    reject(ErrorKind::shape, op, arg,
           "must equal the forward output shape " + nhwc(expected) + ", got " + nhwc(y));
  }
}

void pool2d(std::string_view op, const backend::Nhwc& x, const backend::PoolDescriptor& d) {
  if (d.adaptive_target != 0) {
    positive(op, "adaptive_target", d.adaptive_target);
    positive(op, "x.h", x.h);
    positive(op, "x.w", x.w);
    return;
  }
  positive(op, "window_h", d.window_h);
  positive(op, "window_w", d.window_w);
  positive(op, "stride_h", d.stride_h);
  positive(op, "stride_w", d.stride_w);
  non_negative(op, "pad_h", d.pad_h);
  non_negative(op, "pad_w", d.pad_w);
  if (2 * d.pad_h > d.window_h || 2 * d.pad_w > d.window_w) {
    reject(ErrorKind::shape, op, "pad", "must be at most half the window");
  }
  const backend::Nhwc y = d.output_shape(x);
  if (y.h < 1 || y.w < 1) {
    reject(ErrorKind::shape, op, "x", "spatial extent " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                                          " is smaller than the window");
  }
}

void gemm(std::string_view op, const backend::MatShape& a, bool ta, const backend::MatShape& b, bool tb) {
  const std::int64_t ka = ta ? a.rows : a.cols;
  const std::int64_t kb = tb ? b.cols : b.rows;
  if (ka != kb) {
    reject(ErrorKind::shape, op, "b",
           "inner dimension must be " + std::to_string(ka) + " to match 'a' " + describe({a.rows, a.cols}) +
               (ta ? " (transposed)" : "") + ", got " + std::to_string(kb));
  }
}

}  // namespace tensorforge::core::validate
