#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace tensorforge::backend::kernels::detail {

using RowMajorMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Strided row-major product c (+)= op(a) * op(b). a and b are given with
// their stored dimensions.
void matmul(const float* a, std::int64_t a_rows, std::int64_t a_cols, std::int64_t lda, bool transpose_a,
            const float* b, std::int64_t b_rows, std::int64_t b_cols, std::int64_t ldb, bool transpose_b,
            float* c, std::int64_t ldc, bool accumulate);

}  // namespace tensorforge::backend::kernels::detail
