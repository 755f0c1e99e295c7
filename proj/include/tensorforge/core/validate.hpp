#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tensorforge/backend/types.hpp"

// Parameter checks run by the engine when check mode is on. Each failure
// names the operator, the argument and the violated constraint. The conv and
// pool checks accept exactly the geometries the backend kernels accept.
namespace tensorforge::core::validate {

using Extents = std::vector<std::int64_t>;

std::string describe(const Extents& shape);

void positive(std::string_view op, std::string_view arg, std::int64_t value);
void non_negative(std::string_view op, std::string_view arg, std::int64_t value);
void rank(std::string_view op, std::string_view arg, const Extents& shape, std::size_t lo, std::size_t hi);
void same_shape(std::string_view op, std::string_view arg_a, const Extents& a, std::string_view arg_b,
                const Extents& b);
void equal_extent(std::string_view op, std::string_view arg, std::string_view what, std::int64_t expected,
                  std::int64_t got);

void conv2d(std::string_view op, const backend::Nhwc& x, const backend::ConvDescriptor& desc);
void conv2d_filter(std::string_view op, const Extents& filter, const backend::ConvDescriptor& desc);
void conv2d_output(std::string_view op, std::string_view arg, const backend::Nhwc& x, const backend::Nhwc& y,
                   const backend::ConvDescriptor& desc);
void pool2d(std::string_view op, const backend::Nhwc& x, const backend::PoolDescriptor& desc);
void gemm(std::string_view op, const backend::MatShape& a, bool transpose_a, const backend::MatShape& b,
          bool transpose_b);

}  // namespace tensorforge::core::validate
