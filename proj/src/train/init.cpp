#include "tensorforge/train/init.hpp"

#include <cmath>
#include <string>

#include "tensorforge/error.hpp"
#include "tensorforge/tensor/engine.hpp"

namespace tensorforge::train {

double kaiming_bound(std::int64_t fan_in) {
  require(fan_in >= 1, ErrorKind::argument, "kaiming_uniform_init: fan_in must be positive, got " + std::to_string(fan_in));
  return std::sqrt(6.0 / static_cast<double>(fan_in));
}

void kaiming_uniform_init(const Tensor& param, std::int64_t fan_in, std::uint64_t seed) {
  const auto b = static_cast<float>(kaiming_bound(fan_in));
  param.engine().uniform_fill(param, -b, b, seed);
}

}  // namespace tensorforge::train
