#pragma once

#include "tensorforge/tensor/engine.hpp"

namespace tensorforge::train {

// Mean softmax cross-entropy over the batch. loss() and gradient() on the same
// (yh, y) pair share one kernel launch.
class SoftmaxCrossEntropy {
 public:
  // Loss as a [1] tensor; no synchronization.
  Tensor loss_tensor(const Tensor& yh, const Tensor& y);
  float loss(const Tensor& yh, const Tensor& y) { return loss_tensor(yh, y).item(); }
  // d loss / d yh, shape of yh.
  Tensor gradient(const Tensor& yh, const Tensor& y);

 private:
  const LossOutputs& evaluate(const Tensor& yh, const Tensor& y);

  Tensor yh_;
  Tensor y_;
  LossOutputs cached_;
};

}  // namespace tensorforge::train
