#include "tensorforge/nn/functional.hpp"

#include "tensorforge/error.hpp"
#include "tensorforge/nn/layers.hpp"

namespace tensorforge::F {

namespace {

Tensor call(std::shared_ptr<autograd::LeafUnit> unit, const std::vector<Tensor>& x) {
  require(!x.empty() && x[0].defined(), ErrorKind::invalid_handle, unit->kind() + ": undefined input");
  unit->init(x[0].engine());
  auto out = autograd::LeafUnit::invoke(std::move(unit), x);
  return out.at(0);
}

std::vector<Tensor> single(const std::vector<Tensor>& x, const char* op) {
  require(x.size() == 1, ErrorKind::argument, std::string(op) + ": expected exactly one tensor");
  return x;
}

}  // namespace

Tensor leakyRelu(const Tensor& x, float slope) { return call(nn::leakyRelu(slope), {x}); }

std::vector<Tensor> leakyRelu(const std::vector<Tensor>& x, float slope) {
  return {leakyRelu(single(x, "leakyRelu")[0], slope)};
}

Tensor sigmoid(const Tensor& x) { return call(nn::sigmoid(), {x}); }

Tensor add(const Tensor& a, const Tensor& b) { return call(nn::add(), {a, b}); }

Tensor flatten(const Tensor& x) { return call(nn::flatten(), {x}); }

std::vector<Tensor> flatten(const std::vector<Tensor>& x) { return {flatten(single(x, "flatten")[0])}; }

Tensor maxPool2D(const Tensor& x, std::int64_t window, std::int64_t stride, std::int64_t padding) {
  return call(nn::maxPool2D(window, stride, padding), {x});
}

Tensor adaptive_maxPool2D(std::int64_t target, const Tensor& x) { return call(nn::adaptive_maxPool2D(target), {x}); }

std::vector<Tensor> adaptive_maxPool2D(std::int64_t target, const std::vector<Tensor>& x) {
  return {adaptive_maxPool2D(target, single(x, "adaptive_maxPool2D")[0])};
}

}  // namespace tensorforge::F
