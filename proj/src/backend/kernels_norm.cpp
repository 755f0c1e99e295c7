#include <cmath>
#include <vector>

#include "tensorforge/backend/kernels.hpp"

namespace tensorforge::backend::kernels {

// Channel statistics are accumulated in double; the normalized values are
// produced by the same float expression in forward and backward so the
// in-place route (which reads the normalized output back) is bitwise equal to
// recomputing it from the input.

namespace {

inline float normalize(float x, float mean, float inv_std) { return (x - mean) * inv_std; }

void zero_pad_lanes(float* y, MatShape shape) {
  const std::int64_t ld = shape.ld();
  for (std::int64_t r = 0; r < shape.rows; ++r) {
    for (std::int64_t c = shape.cols; c < ld; ++c) y[r * ld + c] = 0.0f;
  }
}

void store_channel_vector(const std::vector<double>& src, std::int64_t cols, float* dst) {
  const std::int64_t ld = padded_extent(cols);
  for (std::int64_t c = 0; c < cols; ++c) dst[c] = static_cast<float>(src[static_cast<std::size_t>(c)]);
  for (std::int64_t c = cols; c < ld; ++c) dst[c] = 0.0f;
}

}  // namespace

void batchnorm_forward_train(const float* x, MatShape shape, const float* gamma, const float* beta,
                             float* running_mean, float* running_var, BatchNormHyper hyper, float* y,
                             float* saved_mean, float* saved_inv_std) {
  const std::int64_t rows = shape.rows, cols = shape.cols, ld = shape.ld();
  const auto ucols = static_cast<std::size_t>(cols);
  std::vector<double> sum(ucols, 0.0), sq(ucols, 0.0);
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * ld;
    for (std::int64_t c = 0; c < cols; ++c) sum[static_cast<std::size_t>(c)] += xr[c];
  }
  std::vector<double> mean(ucols), inv_std(ucols), var(ucols);
  for (std::size_t c = 0; c < ucols; ++c) mean[c] = rows > 0 ? sum[c] / static_cast<double>(rows) : 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * ld;
    for (std::int64_t c = 0; c < cols; ++c) {
      const double d = xr[c] - mean[static_cast<std::size_t>(c)];
      sq[static_cast<std::size_t>(c)] += d * d;
    }
  }
  std::vector<float> mean_f(ucols), inv_f(ucols);
  for (std::size_t c = 0; c < ucols; ++c) {
    var[c] = rows > 0 ? sq[c] / static_cast<double>(rows) : 0.0;
    inv_std[c] = 1.0 / std::sqrt(var[c] + static_cast<double>(hyper.eps));
    mean_f[c] = static_cast<float>(mean[c]);
    inv_f[c] = static_cast<float>(inv_std[c]);
  }
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * ld;
    float* yr = y + r * ld;
    if (gamma == nullptr) {
      for (std::int64_t c = 0; c < cols; ++c) yr[c] = normalize(xr[c], mean_f[static_cast<std::size_t>(c)], inv_f[static_cast<std::size_t>(c)]);
    } else {
      for (std::int64_t c = 0; c < cols; ++c) {
        const float n = normalize(xr[c], mean_f[static_cast<std::size_t>(c)], inv_f[static_cast<std::size_t>(c)]);
        yr[c] = gamma[c] * n + (beta ? beta[c] : 0.0f);
      }
    }
  }
  zero_pad_lanes(y, shape);
  const float keep = 1.0f - hyper.momentum;
  for (std::int64_t c = 0; c < cols; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    running_mean[c] = keep * running_mean[c] + hyper.momentum * mean_f[uc];
    running_var[c] = keep * running_var[c] + hyper.momentum * static_cast<float>(var[uc]);
  }
  for (std::int64_t c = 0; c < cols; ++c) {
    saved_mean[c] = mean_f[static_cast<std::size_t>(c)];
    saved_inv_std[c] = inv_f[static_cast<std::size_t>(c)];
  }
  for (std::int64_t c = cols; c < ld; ++c) saved_mean[c] = saved_inv_std[c] = 0.0f;
}

void batchnorm_forward_infer(const float* x, MatShape shape, const float* gamma, const float* beta,
                             const float* running_mean, const float* running_var, float eps, float* y) {
  const std::int64_t cols = shape.cols, ld = shape.ld();
  std::vector<float> inv(static_cast<std::size_t>(cols));
  for (std::int64_t c = 0; c < cols; ++c) {
    inv[static_cast<std::size_t>(c)] =
        static_cast<float>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + static_cast<double>(eps)));
  }
  for (std::int64_t r = 0; r < shape.rows; ++r) {
    const float* xr = x + r * ld;
    float* yr = y + r * ld;
    for (std::int64_t c = 0; c < cols; ++c) {
      const float n = normalize(xr[c], running_mean[c], inv[static_cast<std::size_t>(c)]);
      yr[c] = (gamma ? gamma[c] : 1.0f) * n + (beta ? beta[c] : 0.0f);
    }
  }
  zero_pad_lanes(y, shape);
}

void batchnorm_backward(const float* dy, const float* x, bool x_is_normalized, MatShape shape, const float* gamma,
                        const float* saved_mean, const float* saved_inv_std, float* dx, float* dgamma,
                        float* dbeta) {
  const std::int64_t rows = shape.rows, cols = shape.cols, ld = shape.ld();
  const auto ucols = static_cast<std::size_t>(cols);
  auto xhat = [&](std::int64_t r, std::int64_t c) {
    const float v = x[r * ld + c];
    return x_is_normalized ? v : normalize(v, saved_mean[c], saved_inv_std[c]);
  };
  std::vector<double> sum_dy(ucols, 0.0), sum_dy_xhat(ucols, 0.0);
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* g = dy + r * ld;
    for (std::int64_t c = 0; c < cols; ++c) {
      sum_dy[static_cast<std::size_t>(c)] += g[c];
      sum_dy_xhat[static_cast<std::size_t>(c)] += static_cast<double>(g[c]) * xhat(r, c);
    }
  }
  if (dbeta != nullptr) store_channel_vector(sum_dy, cols, dbeta);
  if (dgamma != nullptr) store_channel_vector(sum_dy_xhat, cols, dgamma);
  if (dx == nullptr || rows == 0) return;

  const double m = static_cast<double>(rows);
  std::vector<float> scale(ucols), mean_dy(ucols), mean_dy_xhat(ucols);
  for (std::size_t c = 0; c < ucols; ++c) {
    const double g = gamma ? static_cast<double>(gamma[c]) : 1.0;
    scale[c] = static_cast<float>(g * saved_inv_std[c]);
    mean_dy[c] = static_cast<float>(sum_dy[c] / m);
    mean_dy_xhat[c] = static_cast<float>(sum_dy_xhat[c] / m);
  }
  // dx = gamma * inv_std / M * (M * dy - sum(dy) - xhat * sum(dy * xhat))
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* g = dy + r * ld;
    float* out = dx + r * ld;
    for (std::int64_t c = 0; c < cols; ++c) {
      const auto uc = static_cast<std::size_t>(c);
      out[c] = scale[uc] * (g[c] - mean_dy[uc] - xhat(r, c) * mean_dy_xhat[uc]);
    }
  }
  zero_pad_lanes(dx, shape);
}

}  // namespace tensorforge::backend::kernels
