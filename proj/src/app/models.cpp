#include "tensorforge/app/models.hpp"

#include "tensorforge/error.hpp"
#include "tensorforge/nn/functional.hpp"

namespace tensorforge::app {

Block::Block(std::int64_t in_channels, std::int64_t out_channels, std::int64_t stride) : Module("Block") {
  conv1_ = nn::conv3D(false, in_channels, out_channels, 3, stride, 1);
  bn1_ = nn::batchNorm(false, out_channels);
  add("conv1", conv1_);
  add("bn1", bn1_);
  if (stride != 1 || out_channels != in_channels) {
    downsample_ = nn::sequence(nn::conv3D(false, in_channels, out_channels, 3, stride, 1), nn::batchNorm(out_channels));
    add("downsample", downsample_);
  }
}

std::vector<Tensor> Block::forward_impl(const std::vector<Tensor>& x) {
  std::vector<Tensor> res = x;
  std::vector<Tensor> y = F::leakyRelu(bn1_->forward(conv1_->forward(x)));
  if (downsample_) res = downsample_->forward(res);
  return {F::leakyRelu(F::add(y.at(0), res.at(0)))};
}

Fig2Net::Fig2Net() : Module("Net") {
  conv1_ = nn::conv3D(false, 3, 64, 3, 1, 1);
  bn1_ = nn::batchNorm(false, 64);
  block1_ = std::make_shared<Block>(64, 128, 2);
  block2_ = std::make_shared<Block>(128, 256, 2);
  fc_ = nn::fullconnect(true, 256, 10);
  add("conv1", conv1_);
  add("bn1", bn1_);
  add("block1", block1_);
  add("block2", block2_);
  add("fc", fc_);
}

std::vector<Tensor> Fig2Net::forward_impl(const std::vector<Tensor>& x) {
  std::vector<Tensor> y = bn1_->forward(conv1_->forward(x));
  y = F::leakyRelu(y);
  y = block1_->forward(y);
  y = block2_->forward(y);
  y = F::adaptive_maxPool2D(1, y);
  return fc_->forward(F::flatten(y));
}

namespace {

std::vector<std::shared_ptr<nn::Unit>> conv_bn_act(std::int64_t in, std::int64_t out) {
  return {nn::conv3D(false, in, out, 3, 1, 1), nn::batchNorm(true, out), nn::leakyRelu()};
}

void extend(std::vector<std::shared_ptr<nn::Unit>>& into, std::vector<std::shared_ptr<nn::Unit>> more) {
  for (auto& u : more) into.push_back(std::move(u));
}

}  // namespace

AlexNetSmall::AlexNetSmall() : Module("AlexNetSmall") {
  std::vector<std::shared_ptr<nn::Unit>> f;
  extend(f, conv_bn_act(3, 32));
  f.push_back(nn::maxPool2D(2, 2));
  extend(f, conv_bn_act(32, 64));
  f.push_back(nn::maxPool2D(2, 2));
  extend(f, conv_bn_act(64, 96));
  extend(f, conv_bn_act(96, 96));
  extend(f, conv_bn_act(96, 64));
  f.push_back(nn::maxPool2D(2, 2));
  features_ = nn::sequence(std::move(f));
  classifier_ = nn::sequence(nn::flatten(), nn::fullconnect(true, 4 * 4 * 64, 256), nn::batchNorm(true, 256),
                             nn::leakyRelu(), nn::fullconnect(true, 256, 10));
  add("features", features_);
  add("classifier", classifier_);
}

std::vector<Tensor> AlexNetSmall::forward_impl(const std::vector<Tensor>& x) {
  return classifier_->forward(features_->forward(x));
}

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names{"fig2_resnet", "alexnet_small"};
  return names;
}

std::shared_ptr<nn::Module> build_model(const std::string& name) {
  if (name == "fig2_resnet") return std::make_shared<Fig2Net>();
  if (name == "alexnet_small") return std::make_shared<AlexNetSmall>();
  fail(ErrorKind::argument, "unknown net '" + name + "' (expected fig2_resnet or alexnet_small)");
}

std::shared_ptr<nn::Module> build_model(const std::string& name, Engine& engine, std::uint64_t seed) {
  auto model = build_model(name);
  model->init(engine, "", seed);
  return model;
}

std::int64_t parameter_count(nn::Unit& model) {
  std::int64_t n = 0;
  for (auto* p : model.params()) n += p->value.numel();
  return n;
}

}  // namespace tensorforge::app
