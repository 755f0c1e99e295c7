#pragma once

#include <cstdint>
#include <vector>

#include "tensorforge/autograd/unit.hpp"

namespace tensorforge::train {

// Gradient-descent driver over a fixed list of parameters. update() applies one
// step to every parameter and advances the shared step counter by one.
class Optimizer {
 public:
  Optimizer(std::vector<autograd::Param*> params, float lr);
  virtual ~Optimizer() = default;

  Optimizer& update();
  Optimizer& clear_grads();

  float lr() const noexcept { return lr_; }
  std::int64_t step_count() const noexcept { return step_; }
  const std::vector<autograd::Param*>& params() const noexcept { return params_; }
  // Moment buffers and similar per-parameter state.
  virtual std::vector<Tensor> state() const { return {}; }

 protected:
  virtual void apply(std::size_t index, autograd::Param& p, std::int64_t step) = 0;
  Engine& engine() const { return *engine_; }

 private:
  std::vector<autograd::Param*> params_;
  Engine* engine_ = nullptr;
  float lr_;
  std::int64_t step_ = 0;
};

class Sgd final : public Optimizer {
 public:
  Sgd(std::vector<autograd::Param*> params, float lr);

 protected:
  void apply(std::size_t index, autograd::Param& p, std::int64_t step) override;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<autograd::Param*> params, float lr = 0.01f, float beta1 = 0.9f, float beta2 = 0.999f,
       float eps = 1e-8f);

  backend::AdamHyper hyper() const noexcept { return hyper_; }
  std::vector<Tensor> state() const override;

 protected:
  void apply(std::size_t index, autograd::Param& p, std::int64_t step) override;

 private:
  backend::AdamHyper hyper_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace tensorforge::train
