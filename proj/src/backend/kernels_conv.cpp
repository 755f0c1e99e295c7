#include <algorithm>
#include <cstring>
#include <vector>

#include "gemm_detail.hpp"
#include "tensorforge/backend/kernels.hpp"

namespace tensorforge::backend::kernels {

namespace {

// ---------------------------------------------------------------------------
// small_feature_direct: register-tiled direct convolution. A tile holds
// kTile output positions x kLanes channels of accumulators; the reduction
// runs over kernel taps and then over the contiguous channel dimension.

constexpr std::int64_t kTile = 8;
constexpr std::int64_t kLanes = 32;
constexpr std::int64_t kFilterRows = 8;
constexpr std::int64_t kFilterLanes = 32;

std::int64_t round_up(std::int64_t v, std::int64_t m) { return (v + m - 1) / m * m; }

// acc[p][l] += sum_t sum_j rows[p * taps + t][j] * packed[(t * depth + j) * kLanes + l]
inline void tile_accumulate(const float* const* rows, std::int64_t taps, std::int64_t depth,
                            const float* packed, const float* zero, float (&acc)[kTile][kLanes]) {
  for (std::int64_t t = 0; t < taps; ++t) {
    const float* r[kTile];
    bool any = false;
    for (std::int64_t p = 0; p < kTile; ++p) {
      r[p] = rows[p * taps + t];
      any = any || r[p] != zero;
    }
    if (!any) continue;
    const float* pk = packed + t * depth * kLanes;
    for (std::int64_t j = 0; j < depth; ++j) {
      const float* wv = pk + j * kLanes;
      for (std::int64_t p = 0; p < kTile; ++p) {
        const float xv = r[p][j];
        for (std::int64_t l = 0; l < kLanes; ++l) acc[p][l] += xv * wv[l];
      }
    }
  }
}

// Output-stationary gather convolution shared by the direct forward pass and
// the direct data gradient. `row_of(position, tap)` returns the source row
// (or `zero`); `packed` is laid out [lane_block][tap][depth][kLanes]. Tiles
// whose rows are all `zero` for some tap skip that tap.
template <typename RowOf, typename Store>
void gather_convolve(std::int64_t positions, std::int64_t taps, std::int64_t depth, std::int64_t lanes_total,
                     const float* packed, const float* zero, RowOf&& row_of, Store&& store) {
  const std::int64_t blocks = round_up(lanes_total, kLanes) / kLanes;
  std::vector<const float*> rows(static_cast<std::size_t>(kTile * taps));
  for (std::int64_t base = 0; base < positions; base += kTile) {
    const std::int64_t valid = std::min(kTile, positions - base);
    for (std::int64_t p = 0; p < kTile; ++p) {
      for (std::int64_t t = 0; t < taps; ++t) {
        rows[static_cast<std::size_t>(p * taps + t)] = row_of(p < valid ? base + p : -1, t);
      }
    }
    for (std::int64_t b = 0; b < blocks; ++b) {
      float acc[kTile][kLanes] = {};
      tile_accumulate(rows.data(), taps, depth, packed + b * taps * depth * kLanes, zero, acc);
      const std::int64_t lanes = std::min(kLanes, lanes_total - b * kLanes);
      for (std::int64_t p = 0; p < valid; ++p) store(base + p, b * kLanes, lanes, acc[p]);
    }
  }
}

void forward_direct(const float* x, const Nhwc& xs, const float* w, const ConvDescriptor& d, const float* bias,
                    float* y) {
  const Nhwc ys = d.output_shape(xs);
  const std::int64_t icp = xs.cp(), ocp = ys.cp();
  const std::int64_t ic = xs.c, oc = ys.c;
  const std::int64_t taps = d.kernel_h * d.kernel_w;
  const std::int64_t blocks = round_up(oc, kLanes) / kLanes;

  // packed[b][t][j][l] = w[b*kLanes + l][t][j]
  std::vector<float> packed(static_cast<std::size_t>(blocks * taps * ic * kLanes), 0.0f);
  for (std::int64_t o = 0; o < oc; ++o) {
    const std::int64_t b = o / kLanes, l = o % kLanes;
    for (std::int64_t t = 0; t < taps; ++t) {
      for (std::int64_t j = 0; j < ic; ++j) {
        packed[static_cast<std::size_t>(((b * taps + t) * ic + j) * kLanes + l)] = w[(o * taps + t) * icp + j];
      }
    }
  }
  const std::vector<float> zero(static_cast<std::size_t>(icp), 0.0f);
  const std::int64_t per_image = ys.h * ys.w;

  for (std::int64_t n = 0; n < xs.n; ++n) {
    const float* xn = x + n * xs.h * xs.w * icp;
    float* yn = y + n * per_image * ocp;
    auto row_of = [&](std::int64_t pos, std::int64_t t) -> const float* {
      if (pos < 0) return zero.data();
      const std::int64_t ih = (pos / ys.w) * d.stride_h - d.pad_h + t / d.kernel_w;
      const std::int64_t iw = (pos % ys.w) * d.stride_w - d.pad_w + t % d.kernel_w;
      if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) return zero.data();
      return xn + (ih * xs.w + iw) * icp;
    };
    auto store = [&](std::int64_t pos, std::int64_t first, std::int64_t lanes, const float* acc) {
      float* out = yn + pos * ocp + first;
      for (std::int64_t l = 0; l < lanes; ++l) out[l] = acc[l] + (bias ? bias[first + l] : 0.0f);
    };
    gather_convolve(per_image, taps, ic, oc, packed.data(), zero.data(), row_of, store);
    for (std::int64_t pos = 0; pos < per_image; ++pos) {
      std::fill(yn + pos * ocp + oc, yn + (pos + 1) * ocp, 0.0f);
    }
  }
}

void backward_data_direct(const float* dy, const Nhwc& dys, const float* w, const ConvDescriptor& d, float* dx,
                          const Nhwc& dxs) {
  const std::int64_t icp = dxs.cp(), ocp = dys.cp();
  const std::int64_t ic = dxs.c, oc = dys.c;
  const std::int64_t taps = d.kernel_h * d.kernel_w;
  const std::int64_t blocks = round_up(ic, kLanes) / kLanes;

  // packed[b][t][o][l] = w[o][t][b*kLanes + l]
  std::vector<float> packed(static_cast<std::size_t>(blocks * taps * oc * kLanes), 0.0f);
  for (std::int64_t o = 0; o < oc; ++o) {
    for (std::int64_t t = 0; t < taps; ++t) {
      for (std::int64_t j = 0; j < ic; ++j) {
        const std::int64_t b = j / kLanes, l = j % kLanes;
        packed[static_cast<std::size_t>(((b * taps + t) * oc + o) * kLanes + l)] = w[(o * taps + t) * icp + j];
      }
    }
  }
  const std::vector<float> zero(static_cast<std::size_t>(ocp), 0.0f);
  const std::int64_t per_image = dxs.h * dxs.w;

  // Visit input positions grouped by stride phase so a tile shares the same
  // set of contributing taps.
  std::vector<std::int64_t> order;
  order.reserve(static_cast<std::size_t>(per_image));
  for (std::int64_t ph = 0; ph < d.stride_h; ++ph) {
    for (std::int64_t pw = 0; pw < d.stride_w; ++pw) {
      for (std::int64_t ih = ph; ih < dxs.h; ih += d.stride_h) {
        for (std::int64_t iw = pw; iw < dxs.w; iw += d.stride_w) order.push_back(ih * dxs.w + iw);
      }
    }
  }

  for (std::int64_t n = 0; n < dxs.n; ++n) {
    const float* dyn = dy + n * dys.h * dys.w * ocp;
    float* dxn = dx + n * per_image * icp;
    auto row_of = [&](std::int64_t slot, std::int64_t t) -> const float* {
      if (slot < 0) return zero.data();
      const std::int64_t pos = order[static_cast<std::size_t>(slot)];
      const std::int64_t th = pos / dxs.w + d.pad_h - t / d.kernel_w;
      const std::int64_t tw = pos % dxs.w + d.pad_w - t % d.kernel_w;
      if (th < 0 || tw < 0 || th % d.stride_h != 0 || tw % d.stride_w != 0) return zero.data();
      const std::int64_t oh = th / d.stride_h, ow = tw / d.stride_w;
      if (oh >= dys.h || ow >= dys.w) return zero.data();
      return dyn + (oh * dys.w + ow) * ocp;
    };
    auto store = [&](std::int64_t slot, std::int64_t first, std::int64_t lanes, const float* acc) {
      std::copy(acc, acc + lanes, dxn + order[static_cast<std::size_t>(slot)] * icp + first);
    };
    gather_convolve(per_image, taps, oc, ic, packed.data(), zero.data(), row_of, store);
    for (std::int64_t pos = 0; pos < per_image; ++pos) {
      std::fill(dxn + pos * icp + ic, dxn + (pos + 1) * icp, 0.0f);
    }
  }
}

void backward_filter_direct(const float* x, const Nhwc& xs, const float* dy, const Nhwc& dys,
                            const ConvDescriptor& d, float* dw) {
  const std::int64_t icp = xs.cp(), ocp = dys.cp();
  const std::int64_t ic = xs.c, oc = dys.c;
  const std::int64_t taps = d.kernel_h * d.kernel_w;
  const std::int64_t positions = dys.positions();
  const std::int64_t icq = round_up(ic, kFilterLanes);
  const std::int64_t ocq = round_up(oc, kFilterRows);

  // dy packed [oc_block][m][kFilterRows]
  std::vector<float> dyp(static_cast<std::size_t>(ocq * positions), 0.0f);
  for (std::int64_t m = 0; m < positions; ++m) {
    for (std::int64_t o = 0; o < oc; ++o) {
      dyp[static_cast<std::size_t>(((o / kFilterRows) * positions + m) * kFilterRows + o % kFilterRows)] =
          dy[m * ocp + o];
    }
  }
  std::vector<float> xt(static_cast<std::size_t>(positions * icq));
  std::fill(dw, dw + oc * taps * icp, 0.0f);

  for (std::int64_t t = 0; t < taps; ++t) {
    const std::int64_t kh = t / d.kernel_w, kw = t % d.kernel_w;
    // gather the input row seen by every output position through tap t
    for (std::int64_t m = 0; m < positions; ++m) {
      const std::int64_t n = m / (dys.h * dys.w);
      const std::int64_t r = m % (dys.h * dys.w);
      const std::int64_t ih = (r / dys.w) * d.stride_h - d.pad_h + kh;
      const std::int64_t iw = (r % dys.w) * d.stride_w - d.pad_w + kw;
      float* dst = xt.data() + m * icq;
      if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) {
        std::fill(dst, dst + icq, 0.0f);
      } else {
        const float* src = x + ((n * xs.h + ih) * xs.w + iw) * icp;
        std::copy(src, src + ic, dst);
        std::fill(dst + ic, dst + icq, 0.0f);
      }
    }
    for (std::int64_t ob = 0; ob < ocq / kFilterRows; ++ob) {
      const float* dyb = dyp.data() + ob * positions * kFilterRows;
      for (std::int64_t ib = 0; ib < icq / kFilterLanes; ++ib) {
        float acc[kFilterRows][kFilterLanes] = {};
        const float* xb = xt.data() + ib * kFilterLanes;
        for (std::int64_t m = 0; m < positions; ++m) {
          const float* xv = xb + m * icq;
          const float* gv = dyb + m * kFilterRows;
          for (std::int64_t o = 0; o < kFilterRows; ++o) {
            const float g = gv[o];
            for (std::int64_t l = 0; l < kFilterLanes; ++l) acc[o][l] += g * xv[l];
          }
        }
        for (std::int64_t o = 0; o < kFilterRows; ++o) {
          const std::int64_t oo = ob * kFilterRows + o;
          if (oo >= oc) break;
          const std::int64_t lanes = std::min(kFilterLanes, ic - ib * kFilterLanes);
          std::copy(acc[o], acc[o] + lanes, dw + (oo * taps + t) * icp + ib * kFilterLanes);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// general_im2col: unfold receptive fields into a [positions, taps * pad4(ic)]
// matrix (processed in chunks of positions) and hand the product to GEMM.

constexpr std::int64_t kColumnBudget = std::int64_t{1} << 22;  // floats per unfolded chunk

std::int64_t chunk_rows(std::int64_t k) { return std::max<std::int64_t>(1, kColumnBudget / std::max<std::int64_t>(k, 1)); }

void im2col(const float* x, const Nhwc& xs, const ConvDescriptor& d, const Nhwc& ys, std::int64_t first,
            std::int64_t count, float* col) {
  const std::int64_t icp = xs.cp();
  const std::int64_t k = d.kernel_h * d.kernel_w * icp;
  const std::int64_t per_image = ys.h * ys.w;
  for (std::int64_t r = 0; r < count; ++r) {
    const std::int64_t m = first + r;
    const std::int64_t n = m / per_image, pos = m % per_image;
    const std::int64_t oh = pos / ys.w, ow = pos % ys.w;
    float* dst = col + r * k;
    for (std::int64_t kh = 0; kh < d.kernel_h; ++kh) {
      const std::int64_t ih = oh * d.stride_h - d.pad_h + kh;
      for (std::int64_t kw = 0; kw < d.kernel_w; ++kw, dst += icp) {
        const std::int64_t iw = ow * d.stride_w - d.pad_w + kw;
        if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) {
          std::fill(dst, dst + icp, 0.0f);
        } else {
          std::memcpy(dst, x + ((n * xs.h + ih) * xs.w + iw) * icp, static_cast<std::size_t>(icp) * sizeof(float));
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvDescriptor& d, const Nhwc& ys, std::int64_t first, std::int64_t count,
                float* dx, const Nhwc& xs) {
  const std::int64_t icp = xs.cp();
  const std::int64_t k = d.kernel_h * d.kernel_w * icp;
  const std::int64_t per_image = ys.h * ys.w;
  for (std::int64_t r = 0; r < count; ++r) {
    const std::int64_t m = first + r;
    const std::int64_t n = m / per_image, pos = m % per_image;
    const std::int64_t oh = pos / ys.w, ow = pos % ys.w;
    const float* src = col + r * k;
    for (std::int64_t kh = 0; kh < d.kernel_h; ++kh) {
      const std::int64_t ih = oh * d.stride_h - d.pad_h + kh;
      for (std::int64_t kw = 0; kw < d.kernel_w; ++kw, src += icp) {
        const std::int64_t iw = ow * d.stride_w - d.pad_w + kw;
        if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) continue;
        float* dst = dx + ((n * xs.h + ih) * xs.w + iw) * icp;
        for (std::int64_t j = 0; j < icp; ++j) dst[j] += src[j];
      }
    }
  }
}

void forward_im2col(const float* x, const Nhwc& xs, const float* w, const ConvDescriptor& d, const float* bias,
                    float* y) {
  const Nhwc ys = d.output_shape(xs);
  const std::int64_t k = d.kernel_h * d.kernel_w * xs.cp();
  const std::int64_t ocp = ys.cp(), oc = ys.c;
  const std::int64_t total = ys.positions();
  const std::int64_t step = std::min(total, chunk_rows(k));
  std::vector<float> col(static_cast<std::size_t>(step * k));
  for (std::int64_t first = 0; first < total; first += step) {
    const std::int64_t count = std::min(step, total - first);
    im2col(x, xs, d, ys, first, count, col.data());
    detail::matmul(col.data(), count, k, k, false, w, oc, k, k, true, y + first * ocp, ocp, false);
  }
  for (std::int64_t m = 0; m < total; ++m) {
    float* row = y + m * ocp;
    if (bias != nullptr) {
      for (std::int64_t o = 0; o < oc; ++o) row[o] += bias[o];
    }
    std::fill(row + oc, row + ocp, 0.0f);
  }
}

void backward_data_im2col(const float* dy, const Nhwc& dys, const float* w, const ConvDescriptor& d, float* dx,
                          const Nhwc& dxs) {
  const std::int64_t k = d.kernel_h * d.kernel_w * dxs.cp();
  const std::int64_t ocp = dys.cp(), oc = dys.c;
  const std::int64_t total = dys.positions();
  std::fill(dx, dx + dxs.physical_elements(), 0.0f);
  if (total == 0) return;
  const std::int64_t step = std::min(total, chunk_rows(k));
  std::vector<float> col(static_cast<std::size_t>(step * k));
  for (std::int64_t first = 0; first < total; first += step) {
    const std::int64_t count = std::min(step, total - first);
    detail::matmul(dy + first * ocp, count, oc, ocp, false, w, oc, k, k, false, col.data(), k, false);
    col2im_add(col.data(), d, dys, first, count, dx, dxs);
  }
  const std::int64_t icp = dxs.cp();
  for (std::int64_t m = 0; m < dxs.positions(); ++m) std::fill(dx + m * icp + dxs.c, dx + (m + 1) * icp, 0.0f);
}

void backward_filter_im2col(const float* x, const Nhwc& xs, const float* dy, const Nhwc& dys,
                            const ConvDescriptor& d, float* dw) {
  const std::int64_t icp = xs.cp();
  const std::int64_t k = d.kernel_h * d.kernel_w * icp;
  const std::int64_t ocp = dys.cp(), oc = dys.c;
  const std::int64_t total = dys.positions();
  std::fill(dw, dw + oc * k, 0.0f);
  if (total == 0) return;
  const std::int64_t step = std::min(total, chunk_rows(k));
  std::vector<float> col(static_cast<std::size_t>(step * k));
  for (std::int64_t first = 0; first < total; first += step) {
    const std::int64_t count = std::min(step, total - first);
    im2col(x, xs, d, dys, first, count, col.data());
    detail::matmul(dy + first * ocp, count, oc, ocp, true, col.data(), count, k, k, false, dw, k, true);
  }
  for (std::int64_t r = 0; r < oc * d.kernel_h * d.kernel_w; ++r) {
    std::fill(dw + r * icp + xs.c, dw + (r + 1) * icp, 0.0f);
  }
}

}  // namespace

ConvAlgorithm resolve_conv_algorithm(const ConvDescriptor& desc, const Nhwc& out_shape,
                                     std::int64_t small_feature_threshold) {
  if (desc.algorithm != ConvAlgorithm::automatic) return desc.algorithm;
  return out_shape.h * out_shape.w <= small_feature_threshold ? ConvAlgorithm::small_feature_direct
                                                              : ConvAlgorithm::general_im2col;
}

void conv2d_forward(const float* x, const Nhwc& xs, const float* w, const ConvDescriptor& desc, const float* bias,
                    float* y, ConvAlgorithm algorithm) {
  if (algorithm == ConvAlgorithm::small_feature_direct) {
    forward_direct(x, xs, w, desc, bias, y);
  } else {
    forward_im2col(x, xs, w, desc, bias, y);
  }
}

void conv2d_backward_data(const float* dy, const Nhwc& dys, const float* w, const ConvDescriptor& desc, float* dx,
                          const Nhwc& dxs, ConvAlgorithm algorithm) {
  if (algorithm == ConvAlgorithm::small_feature_direct) {
    backward_data_direct(dy, dys, w, desc, dx, dxs);
  } else {
    backward_data_im2col(dy, dys, w, desc, dx, dxs);
  }
}

void conv2d_backward_filter(const float* x, const Nhwc& xs, const float* dy, const Nhwc& dys,
                            const ConvDescriptor& desc, float* dw, ConvAlgorithm algorithm) {
  if (algorithm == ConvAlgorithm::small_feature_direct) {
    backward_filter_direct(x, xs, dy, dys, desc, dw);
  } else {
    backward_filter_im2col(x, xs, dy, dys, desc, dw);
  }
}

}  // namespace tensorforge::backend::kernels
