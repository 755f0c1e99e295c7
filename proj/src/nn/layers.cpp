#include "tensorforge/nn/layers.hpp"

#include <string>

#include "tensorforge/error.hpp"
#include "tensorforge/tensor/engine.hpp"
#include "tensorforge/train/init.hpp"

namespace tensorforge::nn {

namespace {

bool exclusive(const Tensor& g) { return g.defined() && g.impl()->exclusive_grad; }

void expect_inputs(const std::string& kind, const std::vector<Tensor>& x, std::size_t n) {
  require(x.size() == n, ErrorKind::argument,
          kind + ": expected " + std::to_string(n) + " input(s), got " + std::to_string(x.size()));
}

void accumulate_into(Engine& e, const Tensor& part, const Tensor& grad) {
  e.accumulate(part, grad);
  part.release();
}

}  // namespace

// -- Conv3D ------------------------------------------------------------------

Conv3D::Conv3D(bool bias, std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel,
               std::int64_t stride, std::int64_t padding)
    : LeafUnit("conv3D"), bias_(bias),
      desc_(backend::ConvDescriptor::square(in_channels, out_channels, kernel, stride, padding)) {
  require(in_channels >= 1 && out_channels >= 1, ErrorKind::argument, "conv3D: channels must be positive");
  require(kernel >= 1, ErrorKind::argument, "conv3D: kernel must be positive");
  require(stride >= 1, ErrorKind::argument, "conv3D: stride must be positive");
  require(padding >= 0, ErrorKind::argument, "conv3D: padding must be non-negative");
}

void Conv3D::on_init(std::uint64_t seed) {
  Param& w = add_param("weight", {desc_.out_channels, desc_.kernel_h, desc_.kernel_w, desc_.in_channels});
  const std::int64_t fan_in = desc_.kernel_h * desc_.kernel_w * desc_.in_channels;
  train::kaiming_uniform_init(w.value, fan_in, param_seed(seed, w.name));
  if (bias_) {
    Param& b = add_param("bias", {desc_.out_channels});
    // same bound as the filter, the usual convention for conv bias
    train::kaiming_uniform_init(b.value, fan_in, param_seed(seed, b.name));
  }
}

std::vector<Tensor> Conv3D::forward_op(Invocation& ctx, const std::vector<Tensor>& x) {
  expect_inputs(kind(), x, 1);
  const Tensor* b = bias_ ? &bias().value : nullptr;
  Tensor y = ctx.engine->conv2d(x[0], weight().value, b, desc_);
  ctx.save(x[0]);
  return {y};
}

std::vector<Tensor> Conv3D::backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                        const std::vector<bool>& need_dx) {
  Engine& e = *ctx.engine;
  const Tensor& g = dy[0];
  accumulate_into(e, e.conv2d_backward_filter(ctx.saved[0], g, desc_), weight().grad);
  if (bias_) accumulate_into(e, e.field_sum(g), bias().grad);
  if (!need_dx[0]) return {Tensor{}};
  return {e.conv2d_backward_data(g, weight().value, desc_, ctx.input_shapes[0])};
}

// -- BatchNorm ---------------------------------------------------------------

BatchNorm::BatchNorm(bool affine, std::int64_t channels, float eps, float momentum)
    : LeafUnit("batchNorm"), affine_(affine), channels_(channels) {
  require(channels >= 1, ErrorKind::argument, "batchNorm: channels must be positive");
  require(eps > 0.0f, ErrorKind::argument, "batchNorm: eps must be positive");
  require(momentum >= 0.0f && momentum <= 1.0f, ErrorKind::argument, "batchNorm: momentum must lie in [0, 1]");
  hyper_.eps = eps;
  hyper_.momentum = momentum;
}

void BatchNorm::on_init(std::uint64_t) {
  if (affine_) {
    engine_->fill(add_param("weight", {channels_}).value, 1.0f);
    add_param("bias", {channels_});
  }
  add_buffer("running_mean", {channels_}, 0.0f);
  add_buffer("running_var", {channels_}, 1.0f);
}

std::vector<Tensor> BatchNorm::forward_op(Invocation& ctx, const std::vector<Tensor>& x) {
  expect_inputs(kind(), x, 1);
  const Tensor& in = x[0];
  require(in.rank() >= 2 && in.dim(-1) == channels_, ErrorKind::shape,
          "batchNorm '" + name() + "': channel mismatch, expected last extent " + std::to_string(channels_) +
              ", got input " + to_string(in.shape()));
  Engine& e = *ctx.engine;
  const Tensor* g = affine_ ? &gamma().value : nullptr;
  const Tensor* b = affine_ ? &beta().value : nullptr;
  if (!ctx.training) return {e.batchnorm_infer(in, g, b, running_mean(), running_var(), hyper_.eps)};
  const bool in_place = !ctx.in_place.empty() && ctx.in_place[0];
  BatchNormOutputs out = e.batchnorm_train(in, g, b, running_mean(), running_var(), hyper_, in_place);
  ctx.forward_in_place = in_place;
  ctx.save(in_place ? out.y : in);
  ctx.save(out.saved_mean);
  ctx.save(out.saved_inv_std);
  return {out.y};
}

std::vector<Tensor> BatchNorm::backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                           const std::vector<bool>&) {
  require(ctx.training, ErrorKind::state, "batchNorm '" + name() + "': backward through an inference-mode pass");
  Engine& e = *ctx.engine;
  const Tensor* g = affine_ ? &gamma().value : nullptr;
  const bool in_place = e.in_place_enabled() && exclusive(dy[0]);
  BatchNormGrads grads = e.batchnorm_backward(dy[0], ctx.saved[0], ctx.forward_in_place, g, ctx.saved[1],
                                              ctx.saved[2], affine_, in_place);
  if (affine_) {
    accumulate_into(e, grads.dgamma, gamma().grad);
    accumulate_into(e, grads.dbeta, beta().grad);
  }
  return {grads.dx};
}

// -- FullConnect -------------------------------------------------------------

FullConnect::FullConnect(bool bias, std::int64_t in_features, std::int64_t out_features)
    : LeafUnit("fullconnect"), bias_(bias), in_(in_features), out_(out_features) {
  require(in_features >= 1 && out_features >= 1, ErrorKind::argument, "fullconnect: features must be positive");
}

void FullConnect::on_init(std::uint64_t seed) {
  Param& w = add_param("weight", {in_, out_});
  train::kaiming_uniform_init(w.value, in_, param_seed(seed, w.name));
  if (bias_) {
    Param& b = add_param("bias", {out_});
    train::kaiming_uniform_init(b.value, in_, param_seed(seed, b.name));
  }
}

std::vector<Tensor> FullConnect::forward_op(Invocation& ctx, const std::vector<Tensor>& x) {
  expect_inputs(kind(), x, 1);
  require(x[0].rank() == 2 && x[0].dim(1) == in_, ErrorKind::shape,
          "fullconnect '" + name() + "': feature mismatch, expected [N," + std::to_string(in_) + "], got " +
              to_string(x[0].shape()));
  const Tensor* b = bias_ ? &bias().value : nullptr;
  Tensor y = ctx.engine->matmul(x[0], weight().value, false, false, b);
  ctx.save(x[0]);
  return {y};
}

std::vector<Tensor> FullConnect::backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                             const std::vector<bool>& need_dx) {
  Engine& e = *ctx.engine;
  accumulate_into(e, e.matmul(ctx.saved[0], dy[0], true, false), weight().grad);
  if (bias_) accumulate_into(e, e.field_sum(dy[0]), bias().grad);
  if (!need_dx[0]) return {Tensor{}};
  return {e.matmul(dy[0], weight().value, false, true)};
}

// -- pooling -----------------------------------------------------------------

MaxPool2D::MaxPool2D(std::int64_t window, std::int64_t stride, std::int64_t padding)
    : MaxPool2D(backend::PoolDescriptor{window, window, stride, stride, padding, padding, 0}) {
  require(window >= 1 && stride >= 1 && padding >= 0 && 2 * padding <= window, ErrorKind::argument,
          "maxPool2D: invalid window " + std::to_string(window) + ", stride " + std::to_string(stride) +
              ", padding " + std::to_string(padding));
}

MaxPool2D::MaxPool2D(backend::PoolDescriptor desc) : LeafUnit("maxPool2D"), desc_(desc) {}

std::shared_ptr<MaxPool2D> MaxPool2D::adaptive(std::int64_t target) {
  require(target >= 1, ErrorKind::argument, "adaptive_maxPool2D: target must be positive, got " + std::to_string(target));
  backend::PoolDescriptor d;
  d.adaptive_target = target;
  return std::shared_ptr<MaxPool2D>(new MaxPool2D(d));
}

std::vector<Tensor> MaxPool2D::forward_op(Invocation& ctx, const std::vector<Tensor>& x) {
  expect_inputs(kind(), x, 1);
  PoolOutputs out = ctx.engine->maxpool2d(x[0], desc_);
  ctx.scratch.push_back(out.argmax);
  return {out.y};
}

std::vector<Tensor> MaxPool2D::backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                           const std::vector<bool>& need_dx) {
  if (!need_dx[0]) return {Tensor{}};
  return {ctx.engine->maxpool2d_backward(dy[0], ctx.scratch[0], ctx.input_shapes[0])};
}

// -- activations -------------------------------------------------------------

LeakyRelu::LeakyRelu(float slope) : LeafUnit("leakyRelu"), slope_(slope) {
  // backward reads the sign of x off the output
  require(slope >= 0.0f, ErrorKind::argument, "leakyRelu: slope must be non-negative");
}

std::vector<Tensor> LeakyRelu::forward_op(Invocation& ctx, const std::vector<Tensor>& x) {
  expect_inputs(kind(), x, 1);
  Tensor y = ctx.engine->leaky_relu(x[0], slope_, !ctx.in_place.empty() && ctx.in_place[0]);
  ctx.save(y);
  return {y};
}

std::vector<Tensor> LeakyRelu::backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                           const std::vector<bool>& need_dx) {
  if (!need_dx[0]) return {Tensor{}};
  Engine& e = *ctx.engine;
  return {e.leaky_relu_backward(dy[0], ctx.saved[0], slope_, e.in_place_enabled() && exclusive(dy[0]))};
}

Sigmoid::Sigmoid() : LeafUnit("sigmoid") {}

std::vector<Tensor> Sigmoid::forward_op(Invocation& ctx, const std::vector<Tensor>& x) {
  expect_inputs(kind(), x, 1);
  Tensor y = ctx.engine->sigmoid(x[0], !ctx.in_place.empty() && ctx.in_place[0]);
  ctx.save(y);
  return {y};
}

std::vector<Tensor> Sigmoid::backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                         const std::vector<bool>& need_dx) {
  if (!need_dx[0]) return {Tensor{}};
  Engine& e = *ctx.engine;
  return {e.sigmoid_backward(dy[0], ctx.saved[0], e.in_place_enabled() && exclusive(dy[0]))};
}

// -- shape and arithmetic ----------------------------------------------------

Flatten::Flatten() : LeafUnit("flatten") {}

std::vector<Tensor> Flatten::forward_op(Invocation& ctx, const std::vector<Tensor>& x) {
  expect_inputs(kind(), x, 1);
  const Shape& s = x[0].shape();
  std::int64_t rest = 1;
  for (std::size_t i = 1; i < s.size(); ++i) rest *= s[i];
  return {ctx.engine->reshape(x[0], {s[0], rest})};
}

std::vector<Tensor> Flatten::backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                         const std::vector<bool>& need_dx) {
  if (!need_dx[0]) return {Tensor{}};
  return {ctx.engine->reshape(dy[0], ctx.input_shapes[0])};
}

Add::Add() : LeafUnit("add") {}

std::vector<Tensor> Add::forward_op(Invocation& ctx, const std::vector<Tensor>& x) {
  expect_inputs(kind(), x, 2);
  require(x[0].shape() == x[1].shape(), ErrorKind::shape,
          "add: shape mismatch " + to_string(x[0].shape()) + " vs " + to_string(x[1].shape()));
  return {ctx.engine->add(x[0], x[1])};
}

std::vector<Tensor> Add::backward_op(Invocation&, const std::vector<Tensor>& dy, const std::vector<bool>& need_dx) {
  // both branches receive the same buffer; the graph marks it shared
  return {need_dx[0] ? dy[0] : Tensor{}, need_dx[1] ? dy[0] : Tensor{}};
}

// -- Sequence ----------------------------------------------------------------

Sequence::Sequence(std::vector<std::shared_ptr<Unit>> units) : Module("sequence") {
  for (std::size_t i = 0; i < units.size(); ++i) {
    require(units[i] != nullptr, ErrorKind::argument, "sequence: unit " + std::to_string(i) + " is null");
    units_.push_back(&add(std::to_string(i), std::move(units[i])));
  }
}

std::vector<Tensor> Sequence::forward_impl(const std::vector<Tensor>& x) {
  std::vector<Tensor> out = x;
  for (Unit* u : units_) out = u->forward(out);
  return out;
}

// -- factories ---------------------------------------------------------------

std::shared_ptr<Conv3D> conv3D(bool bias, std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel,
                               std::int64_t stride, std::int64_t padding) {
  return std::make_shared<Conv3D>(bias, in_channels, out_channels, kernel, stride, padding);
}

std::shared_ptr<BatchNorm> batchNorm(bool affine, std::int64_t channels) {
  return std::make_shared<BatchNorm>(affine, channels);
}

std::shared_ptr<BatchNorm> batchNorm(std::int64_t channels) { return batchNorm(true, channels); }

std::shared_ptr<FullConnect> fullconnect(bool bias, std::int64_t in_features, std::int64_t out_features) {
  return std::make_shared<FullConnect>(bias, in_features, out_features);
}

std::shared_ptr<MaxPool2D> maxPool2D(std::int64_t window, std::int64_t stride, std::int64_t padding) {
  return std::make_shared<MaxPool2D>(window, stride, padding);
}

std::shared_ptr<MaxPool2D> adaptive_maxPool2D(std::int64_t target) { return MaxPool2D::adaptive(target); }

std::shared_ptr<LeakyRelu> leakyRelu(float slope) { return std::make_shared<LeakyRelu>(slope); }
std::shared_ptr<Sigmoid> sigmoid() { return std::make_shared<Sigmoid>(); }
std::shared_ptr<Flatten> flatten() { return std::make_shared<Flatten>(); }
std::shared_ptr<Add> add() { return std::make_shared<Add>(); }

std::shared_ptr<Sequence> sequence(std::vector<std::shared_ptr<Unit>> units) {
  return std::make_shared<Sequence>(std::move(units));
}

}  // namespace tensorforge::nn
