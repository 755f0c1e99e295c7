#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tensorforge/backend/kernels.hpp"
#include "tensorforge/rng.hpp"

namespace tensorforge::backend::kernels {

namespace {

template <typename F>
void for_each_row(MatShape shape, float* y, F&& f) {
  const std::int64_t ld = shape.ld();
  for (std::int64_t r = 0; r < shape.rows; ++r) {
    float* yr = y + r * ld;
    f(r, yr);
    std::fill(yr + shape.cols, yr + ld, 0.0f);
  }
}

}  // namespace

void elementwise_unary(UnaryOp op, const void* x, const float* aux, MatShape shape, float* y) {
  const std::int64_t ld = shape.ld(), cols = shape.cols;
  const float k = op.k;
  switch (op.code) {
    case UnaryCode::pix2float: {
      const auto* bytes = static_cast<const std::uint8_t*>(x);
      for_each_row(shape, y, [&](std::int64_t r, float* yr) {
        const std::uint8_t* xr = bytes + r * ld;
        for (std::int64_t c = 0; c < cols; ++c) yr[c] = static_cast<float>(xr[c]) / 255.0f;
      });
      return;
    }
    case UnaryCode::leaky_relu_fwd: {
      const auto* xf = static_cast<const float*>(x);
      for_each_row(shape, y, [&](std::int64_t r, float* yr) {
        const float* xr = xf + r * ld;
        for (std::int64_t c = 0; c < cols; ++c) yr[c] = xr[c] > 0.0f ? xr[c] : k * xr[c];
      });
      return;
    }
    case UnaryCode::leaky_relu_bwd: {
      // x carries dy, aux the forward output
      const auto* dy = static_cast<const float*>(x);
      for_each_row(shape, y, [&](std::int64_t r, float* yr) {
        const float* g = dy + r * ld;
        const float* out = aux + r * ld;
        for (std::int64_t c = 0; c < cols; ++c) yr[c] = out[c] > 0.0f ? g[c] : k * g[c];
      });
      return;
    }
    case UnaryCode::sigmoid_fwd: {
      const auto* xf = static_cast<const float*>(x);
      for_each_row(shape, y, [&](std::int64_t r, float* yr) {
        const float* xr = xf + r * ld;
        for (std::int64_t c = 0; c < cols; ++c) yr[c] = 1.0f / (1.0f + std::exp(-xr[c]));
      });
      return;
    }
    case UnaryCode::sigmoid_bwd: {
      const auto* dy = static_cast<const float*>(x);
      for_each_row(shape, y, [&](std::int64_t r, float* yr) {
        const float* g = dy + r * ld;
        const float* out = aux + r * ld;
        for (std::int64_t c = 0; c < cols; ++c) yr[c] = g[c] * out[c] * (1.0f - out[c]);
      });
      return;
    }
    case UnaryCode::scale: {
      const auto* xf = static_cast<const float*>(x);
      for_each_row(shape, y, [&](std::int64_t r, float* yr) {
        const float* xr = xf + r * ld;
        for (std::int64_t c = 0; c < cols; ++c) yr[c] = k * xr[c];
      });
      return;
    }
  }
}

void elementwise_binary(BinaryCode code, const float* x1, const float* x2, MatShape shape, float* y) {
  const std::int64_t ld = shape.ld(), cols = shape.cols;
  for_each_row(shape, y, [&](std::int64_t r, float* yr) {
    const float* a = x1 + r * ld;
    const float* b = x2 + r * ld;
    if (code == BinaryCode::add) {
      for (std::int64_t c = 0; c < cols; ++c) yr[c] = a[c] + b[c];
    } else {
      for (std::int64_t c = 0; c < cols; ++c) yr[c] = a[c] * b[c];
    }
  });
}

void accumulate(const float* x, MatShape shape, float* y) {
  const std::int64_t ld = shape.ld(), cols = shape.cols;
  for_each_row(shape, y, [&](std::int64_t r, float* yr) {
    const float* xr = x + r * ld;
    for (std::int64_t c = 0; c < cols; ++c) yr[c] += xr[c];
  });
}

void fill(float* y, MatShape shape, float value) {
  for_each_row(shape, y, [&](std::int64_t, float* yr) { std::fill(yr, yr + shape.cols, value); });
}

void reduce_field_sum(const float* x, MatShape shape, float* out) {
  const std::int64_t ld = shape.ld(), cols = shape.cols;
  std::vector<double> acc(static_cast<std::size_t>(cols), 0.0);
  for (std::int64_t r = 0; r < shape.rows; ++r) {
    const float* xr = x + r * ld;
    for (std::int64_t c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += xr[c];
  }
  for (std::int64_t c = 0; c < cols; ++c) out[c] = static_cast<float>(acc[static_cast<std::size_t>(c)]);
  std::fill(out + cols, out + ld, 0.0f);
}

bool softmax_crossentropy(const float* logits, const float* onehot, MatShape shape, bool validate_labels,
                          float* loss, float* dlogits) {
  const std::int64_t ld = shape.ld(), cols = shape.cols, rows = shape.rows;
  if (validate_labels) {
    for (std::int64_t r = 0; r < rows; ++r) {
      const float* y = onehot + r * ld;
      std::int64_t ones = 0;
      for (std::int64_t c = 0; c < cols; ++c) {
        if (y[c] == 1.0f) {
          ++ones;
        } else if (y[c] != 0.0f) {
          return false;
        }
      }
      if (ones != 1) return false;
    }
  }
  double total = 0.0;
  const float inv_rows = rows > 0 ? 1.0f / static_cast<float>(rows) : 0.0f;
  std::vector<double> e(static_cast<std::size_t>(cols));
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* z = logits + r * ld;
    const float* y = onehot + r * ld;
    float* g = dlogits + r * ld;
    const float zmax = cols > 0 ? *std::max_element(z, z + cols) : 0.0f;
    double sum = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      e[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(z[c]) - zmax);
      sum += e[static_cast<std::size_t>(c)];
    }
    const double log_sum = std::log(sum);
    for (std::int64_t c = 0; c < cols; ++c) {
      const double log_p = static_cast<double>(z[c]) - zmax - log_sum;
      total -= static_cast<double>(y[c]) * log_p;
      const double p = e[static_cast<std::size_t>(c)] / sum;
      g[c] = static_cast<float>(p - y[c]) * inv_rows;
    }
    std::fill(g + cols, g + ld, 0.0f);
  }
  loss[0] = rows > 0 ? static_cast<float>(total / static_cast<double>(rows)) : 0.0f;
  std::fill(loss + 1, loss + 4, 0.0f);
  return true;
}

void adam_step(float* param, const float* grad, float* m, float* v, std::int64_t count, std::int64_t step,
               AdamHyper hyper) {
  const double t = static_cast<double>(step);
  const float correct1 = static_cast<float>(1.0 / (1.0 - std::pow(static_cast<double>(hyper.beta1), t)));
  const float correct2 = static_cast<float>(1.0 / (1.0 - std::pow(static_cast<double>(hyper.beta2), t)));
  const float b1 = hyper.beta1, b2 = hyper.beta2;
  const float a1 = 1.0f - b1, a2 = 1.0f - b2;
  for (std::int64_t i = 0; i < count; ++i) {
    const float g = grad[i];
    m[i] = b1 * m[i] + a1 * g;
    v[i] = b2 * v[i] + a2 * g * g;
    const float mhat = m[i] * correct1;
    const float vhat = v[i] * correct2;
    param[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
}

void sgd_step(float* param, const float* grad, std::int64_t count, float lr) {
  for (std::int64_t i = 0; i < count; ++i) param[i] -= lr * grad[i];
}

void uniform_fill(float* y, MatShape shape, float low, float high, std::uint64_t seed) {
  Rng rng(seed);
  const double lo = low, span = static_cast<double>(high) - static_cast<double>(low);
  for_each_row(shape, y, [&](std::int64_t, float* yr) {
    for (std::int64_t c = 0; c < shape.cols; ++c) {
      float v = static_cast<float>(lo + span * rng.next_unit());
      // rounding to float may land on the excluded upper bound
      if (high > low && v >= high) v = std::nextafter(high, low);
      yr[c] = v;
    }
  });
}

}  // namespace tensorforge::backend::kernels
