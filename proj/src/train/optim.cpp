#include "tensorforge/train/optim.hpp"

#include <string>

#include "tensorforge/error.hpp"

namespace tensorforge::train {

Optimizer::Optimizer(std::vector<autograd::Param*> params, float lr) : params_(std::move(params)), lr_(lr) {
  require(lr > 0.0f, ErrorKind::argument, "optimizer: learning rate must be positive, got " + std::to_string(lr));
  for (auto* p : params_) {
    require(p != nullptr && p->value.defined(), ErrorKind::argument, "optimizer: undefined parameter");
    if (engine_ == nullptr) engine_ = &p->value.engine();
    require(&p->value.engine() == engine_, ErrorKind::argument,
            "optimizer: parameter '" + p->name + "' lives on another engine");
  }
}

Optimizer& Optimizer::update() {
  for (auto* p : params_) {
    require(p->grad.defined() && !p->grad.released(), ErrorKind::state,
            "optimizer: parameter '" + p->name + "' has no gradient");
  }
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) apply(i, *params_[i], step_);
  return *this;
}

Optimizer& Optimizer::clear_grads() {
  for (auto* p : params_) {
    if (p->grad.defined() && !p->grad.released()) engine_->fill(p->grad, 0.0f);
  }
  return *this;
}

Sgd::Sgd(std::vector<autograd::Param*> params, float lr) : Optimizer(std::move(params), lr) {}

void Sgd::apply(std::size_t, autograd::Param& p, std::int64_t) { engine().sgd_step(p.value, p.grad, lr()); }

Adam::Adam(std::vector<autograd::Param*> params, float lr, float beta1, float beta2, float eps)
    : Optimizer(std::move(params), lr) {
  require(beta1 >= 0.0f && beta1 < 1.0f && beta2 >= 0.0f && beta2 < 1.0f, ErrorKind::argument,
          "adam: betas must lie in [0, 1)");
  require(eps > 0.0f, ErrorKind::argument, "adam: eps must be positive");
  hyper_ = {lr, beta1, beta2, eps};
  for (auto* p : this->params()) {
    m_.push_back(engine().zeros(p->value.shape()));
    v_.push_back(engine().zeros(p->value.shape()));
  }
}

std::vector<Tensor> Adam::state() const {
  std::vector<Tensor> out = m_;
  out.insert(out.end(), v_.begin(), v_.end());
  return out;
}

void Adam::apply(std::size_t index, autograd::Param& p, std::int64_t step) {
  engine().adam_step(p.value, p.grad, m_[index], v_[index], step, hyper_);
}

}  // namespace tensorforge::train
