#pragma once

#include <cstdint>

#include "tensorforge/tensor/tensor.hpp"

namespace tensorforge::train {

// Kaiming-uniform for ReLU-family layers (gain sqrt 2, fan-in mode): draws
// on [-b, b) with b = sqrt(6 / fan_in).
void kaiming_uniform_init(const Tensor& param, std::int64_t fan_in, std::uint64_t seed);

double kaiming_bound(std::int64_t fan_in);

}  // namespace tensorforge::train
