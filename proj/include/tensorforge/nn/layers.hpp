#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "tensorforge/autograd/unit.hpp"

namespace tensorforge::nn {

using autograd::Invocation;
using autograd::LeafUnit;
using autograd::Module;
using autograd::Param;
using autograd::Unit;

// 2D-spatial convolution over NHWC tensors ("conv3D": the filter is 3D per
// output channel). Filter layout [out, k, k, in].
class Conv3D final : public LeafUnit {
 public:
  Conv3D(bool bias, std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, std::int64_t stride,
         std::int64_t padding);

  const backend::ConvDescriptor& descriptor() const noexcept { return desc_; }
  // Forces a dispatch path; automatic by default.
  Conv3D& algorithm(backend::ConvAlgorithm algo) noexcept {
    desc_.algorithm = algo;
    return *this;
  }
  bool has_bias() const noexcept { return bias_; }
  Param& weight() { return params_.at(0); }
  Param& bias() { return params_.at(1); }

  std::vector<Tensor> forward_op(Invocation& ctx, const std::vector<Tensor>& x) override;
  std::vector<Tensor> backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                  const std::vector<bool>& need_dx) override;

 protected:
  void on_init(std::uint64_t seed) override;

 private:
  bool bias_;
  backend::ConvDescriptor desc_;
};

// Batch normalization over the last (channel) axis.
class BatchNorm final : public LeafUnit {
 public:
  BatchNorm(bool affine, std::int64_t channels, float eps = 1e-8f, float momentum = 0.1f);

  bool affine() const noexcept { return affine_; }
  std::int64_t channels() const noexcept { return channels_; }
  backend::BatchNormHyper hyper() const noexcept { return hyper_; }
  Param& gamma() { return params_.at(0); }
  Param& beta() { return params_.at(1); }
  const Tensor& running_mean() const { return buffers_.at(0).tensor; }
  const Tensor& running_var() const { return buffers_.at(1).tensor; }

  std::vector<Tensor> forward_op(Invocation& ctx, const std::vector<Tensor>& x) override;
  std::vector<Tensor> backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                  const std::vector<bool>& need_dx) override;
  // the normalized output can replace x only without an affine transform,
  // since backward recovers x-hat from it
  bool in_place_candidate(std::size_t) const override { return !affine_; }

 protected:
  void on_init(std::uint64_t seed) override;

 private:
  bool affine_;
  std::int64_t channels_;
  backend::BatchNormHyper hyper_;
};

// y = x W + b with W of shape [in, out].
class FullConnect final : public LeafUnit {
 public:
  FullConnect(bool bias, std::int64_t in_features, std::int64_t out_features);

  bool has_bias() const noexcept { return bias_; }
  Param& weight() { return params_.at(0); }
  Param& bias() { return params_.at(1); }

  std::vector<Tensor> forward_op(Invocation& ctx, const std::vector<Tensor>& x) override;
  std::vector<Tensor> backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                  const std::vector<bool>& need_dx) override;

 protected:
  void on_init(std::uint64_t seed) override;

 private:
  bool bias_;
  std::int64_t in_;
  std::int64_t out_;
};

class MaxPool2D final : public LeafUnit {
 public:
  MaxPool2D(std::int64_t window, std::int64_t stride, std::int64_t padding = 0);
  static std::shared_ptr<MaxPool2D> adaptive(std::int64_t target);

  const backend::PoolDescriptor& descriptor() const noexcept { return desc_; }

  std::vector<Tensor> forward_op(Invocation& ctx, const std::vector<Tensor>& x) override;
  std::vector<Tensor> backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                  const std::vector<bool>& need_dx) override;

 private:
  explicit MaxPool2D(backend::PoolDescriptor desc);
  backend::PoolDescriptor desc_;
};

class LeakyRelu final : public LeafUnit {
 public:
  explicit LeakyRelu(float slope = 0.01f);
  float slope() const noexcept { return slope_; }

  std::vector<Tensor> forward_op(Invocation& ctx, const std::vector<Tensor>& x) override;
  std::vector<Tensor> backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                  const std::vector<bool>& need_dx) override;
  bool in_place_candidate(std::size_t) const override { return true; }

 private:
  float slope_;
};

class Sigmoid final : public LeafUnit {
 public:
  Sigmoid();

  std::vector<Tensor> forward_op(Invocation& ctx, const std::vector<Tensor>& x) override;
  std::vector<Tensor> backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                  const std::vector<bool>& need_dx) override;
  bool in_place_candidate(std::size_t) const override { return true; }
};

// [N, ...] -> [N, prod(...)]
class Flatten final : public LeafUnit {
 public:
  Flatten();

  std::vector<Tensor> forward_op(Invocation& ctx, const std::vector<Tensor>& x) override;
  std::vector<Tensor> backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                  const std::vector<bool>& need_dx) override;
};

// Element-wise sum of two equally shaped tensors.
class Add final : public LeafUnit {
 public:
  Add();

  std::vector<Tensor> forward_op(Invocation& ctx, const std::vector<Tensor>& x) override;
  std::vector<Tensor> backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                  const std::vector<bool>& need_dx) override;
};

// Chains its children; child i is named by its position.
class Sequence final : public Module {
 public:
  explicit Sequence(std::vector<std::shared_ptr<Unit>> units);
  std::size_t size() const noexcept { return units_.size(); }
  Unit& at(std::size_t i) const { return *units_.at(i); }

 protected:
  std::vector<Tensor> forward_impl(const std::vector<Tensor>& x) override;

 private:
  std::vector<Unit*> units_;
};

// Factories mirroring the layer catalog.
std::shared_ptr<Conv3D> conv3D(bool bias, std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel,
                               std::int64_t stride, std::int64_t padding);
std::shared_ptr<BatchNorm> batchNorm(bool affine, std::int64_t channels);
std::shared_ptr<BatchNorm> batchNorm(std::int64_t channels);
std::shared_ptr<FullConnect> fullconnect(bool bias, std::int64_t in_features, std::int64_t out_features);
std::shared_ptr<MaxPool2D> maxPool2D(std::int64_t window, std::int64_t stride, std::int64_t padding = 0);
std::shared_ptr<MaxPool2D> adaptive_maxPool2D(std::int64_t target);
std::shared_ptr<LeakyRelu> leakyRelu(float slope = 0.01f);
std::shared_ptr<Sigmoid> sigmoid();
std::shared_ptr<Flatten> flatten();
std::shared_ptr<Add> add();
std::shared_ptr<Sequence> sequence(std::vector<std::shared_ptr<Unit>> units);

template <typename... U>
std::shared_ptr<Sequence> sequence(std::shared_ptr<U>... units) {
  return sequence(std::vector<std::shared_ptr<Unit>>{std::move(units)...});
}

}  // namespace tensorforge::nn
