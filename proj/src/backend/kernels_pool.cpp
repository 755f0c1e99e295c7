#include <algorithm>
#include <limits>

#include "tensorforge/backend/kernels.hpp"

namespace tensorforge::backend::kernels {

namespace {

struct Window {
  std::int64_t begin;
  std::int64_t end;
};

// Adaptive partition: [floor(i*in/out), ceil((i+1)*in/out)).
Window axis_window(std::int64_t i, std::int64_t in, std::int64_t out, std::int64_t window, std::int64_t stride,
                   std::int64_t pad, bool adaptive) {
  if (adaptive) {
    return {i * in / out, ((i + 1) * in + out - 1) / out};
  }
  const std::int64_t begin = i * stride - pad;
  return {std::max<std::int64_t>(begin, 0), std::min(begin + window, in)};
}

}  // namespace

void maxpool2d_forward(const float* x, const Nhwc& xs, const PoolDescriptor& desc, float* y,
                       std::int64_t* argmax) {
  const Nhwc ys = desc.output_shape(xs);
  const bool adaptive = desc.adaptive_target > 0;
  const std::int64_t cp = xs.cp();
  for (std::int64_t n = 0; n < ys.n; ++n) {
    for (std::int64_t oh = 0; oh < ys.h; ++oh) {
      const Window wh = axis_window(oh, xs.h, ys.h, desc.window_h, desc.stride_h, desc.pad_h, adaptive);
      for (std::int64_t ow = 0; ow < ys.w; ++ow) {
        const Window ww = axis_window(ow, xs.w, ys.w, desc.window_w, desc.stride_w, desc.pad_w, adaptive);
        const std::int64_t out = ((n * ys.h + oh) * ys.w + ow);
        float* yr = y + out * cp;
        std::int64_t* ar = argmax + out * xs.c;
        for (std::int64_t c = 0; c < xs.c; ++c) {
          float best = -std::numeric_limits<float>::infinity();
          std::int64_t where = -1;
          for (std::int64_t h = wh.begin; h < wh.end; ++h) {
            for (std::int64_t w = ww.begin; w < ww.end; ++w) {
              const std::int64_t pos = (n * xs.h + h) * xs.w + w;
              const float v = x[pos * cp + c];
              // strict comparison keeps the first (lowest index) maximum
              if (where < 0 || v > best) {
                best = v;
                where = pos * xs.c + c;
              }
            }
          }
          yr[c] = where < 0 ? 0.0f : best;
          ar[c] = where;
        }
        std::fill(yr + xs.c, yr + cp, 0.0f);
      }
    }
  }
}

void maxpool2d_backward(const float* dy, const Nhwc& ys, const std::int64_t* argmax, float* dx, const Nhwc& xs) {
  const std::int64_t cp = xs.cp();
  std::fill(dx, dx + xs.physical_elements(), 0.0f);
  const std::int64_t outputs = ys.positions();
  for (std::int64_t o = 0; o < outputs; ++o) {
    for (std::int64_t c = 0; c < ys.c; ++c) {
      const std::int64_t idx = argmax[o * ys.c + c];
      if (idx < 0) continue;
      dx[(idx / xs.c) * cp + idx % xs.c] += dy[o * ys.cp() + c];
    }
  }
}

}  // namespace tensorforge::backend::kernels
