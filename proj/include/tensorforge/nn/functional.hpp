#pragma once

#include <vector>

#include "tensorforge/tensor/tensor.hpp"

// Stateless layers as functions. Inside a recorded pass every call becomes a
// graph node; outside one they run directly in inference mode.
namespace tensorforge::F {

Tensor leakyRelu(const Tensor& x, float slope = 0.01f);
std::vector<Tensor> leakyRelu(const std::vector<Tensor>& x, float slope = 0.01f);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor flatten(const Tensor& x);
std::vector<Tensor> flatten(const std::vector<Tensor>& x);
Tensor maxPool2D(const Tensor& x, std::int64_t window, std::int64_t stride, std::int64_t padding = 0);
Tensor adaptive_maxPool2D(std::int64_t target, const Tensor& x);
std::vector<Tensor> adaptive_maxPool2D(std::int64_t target, const std::vector<Tensor>& x);

}  // namespace tensorforge::F
