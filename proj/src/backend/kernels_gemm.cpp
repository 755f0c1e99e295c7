#include <Eigen/Core>

#include "gemm_detail.hpp"
#include "tensorforge/backend/kernels.hpp"

namespace tensorforge::backend::kernels {

namespace detail {

void matmul(const float* a, std::int64_t a_rows, std::int64_t a_cols, std::int64_t lda, bool transpose_a,
            const float* b, std::int64_t b_rows, std::int64_t b_cols, std::int64_t ldb, bool transpose_b,
            float* c, std::int64_t ldc, bool accumulate) {
  using Stride = Eigen::OuterStride<>;
  using ConstMap = Eigen::Map<const RowMajorMatrix, Eigen::Unaligned, Stride>;
  using Map = Eigen::Map<RowMajorMatrix, Eigen::Unaligned, Stride>;
  const ConstMap am(a, a_rows, a_cols, Stride(lda));
  const ConstMap bm(b, b_rows, b_cols, Stride(ldb));
  const std::int64_t m = transpose_a ? a_cols : a_rows;
  const std::int64_t n = transpose_b ? b_rows : b_cols;
  Map cm(c, m, n, Stride(ldc));
  if (accumulate) {
    if (!transpose_a && !transpose_b) cm.noalias() += am * bm;
    else if (transpose_a && !transpose_b) cm.noalias() += am.transpose() * bm;
    else if (!transpose_a && transpose_b) cm.noalias() += am * bm.transpose();
    else cm.noalias() += am.transpose() * bm.transpose();
  } else {
    if (!transpose_a && !transpose_b) cm.noalias() = am * bm;
    else if (transpose_a && !transpose_b) cm.noalias() = am.transpose() * bm;
    else if (!transpose_a && transpose_b) cm.noalias() = am * bm.transpose();
    else cm.noalias() = am.transpose() * bm.transpose();
  }
}

}  // namespace detail

void gemm(const float* a, MatShape a_shape, bool transpose_a, const float* b, MatShape b_shape,
          bool transpose_b, const float* bias, float* c) {
  const std::int64_t m = transpose_a ? a_shape.cols : a_shape.rows;
  const std::int64_t n = transpose_b ? b_shape.rows : b_shape.cols;
  const MatShape c_shape{m, n};
  const std::int64_t ldc = c_shape.ld();
  if (a_shape.rows * a_shape.cols == 0 || b_shape.rows * b_shape.cols == 0) {
    for (std::int64_t i = 0; i < c_shape.physical_elements(); ++i) c[i] = 0.0f;
  } else {
    detail::matmul(a, a_shape.rows, a_shape.cols, a_shape.ld(), transpose_a, b, b_shape.rows, b_shape.cols,
                   b_shape.ld(), transpose_b, c, ldc, false);
  }
  for (std::int64_t i = 0; i < m; ++i) {
    float* row = c + i * ldc;
    if (bias != nullptr) {
      for (std::int64_t j = 0; j < n; ++j) row[j] += bias[j];
    }
    for (std::int64_t j = n; j < ldc; ++j) row[j] = 0.0f;
  }
}

}  // namespace tensorforge::backend::kernels
