#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tensorforge/nn/layers.hpp"

namespace tensorforge::app {

// Residual block: leakyRelu(bn1(conv1(x))) + downsample(x), then leakyRelu.
class Block final : public nn::Module {
 public:
  Block(std::int64_t in_channels, std::int64_t out_channels, std::int64_t stride);

  nn::Conv3D& conv1() { return *conv1_; }
  nn::BatchNorm& bn1() { return *bn1_; }
  nn::Sequence* downsample() { return downsample_.get(); }

 protected:
  std::vector<Tensor> forward_impl(const std::vector<Tensor>& x) override;

 private:
  std::shared_ptr<nn::Conv3D> conv1_;
  std::shared_ptr<nn::BatchNorm> bn1_;
  std::shared_ptr<nn::Sequence> downsample_;
};

// conv 3->64, bn, leakyRelu, Block(64,128,2), Block(128,256,2), adaptive max
// pool to 1x1, flatten, fc 256->10. Takes float32 [N,32,32,3].
class Fig2Net final : public nn::Module {
 public:
  Fig2Net();

 protected:
  std::vector<Tensor> forward_impl(const std::vector<Tensor>& x) override;

 private:
  std::shared_ptr<nn::Conv3D> conv1_;
  std::shared_ptr<nn::BatchNorm> bn1_;
  std::shared_ptr<Block> block1_;
  std::shared_ptr<Block> block2_;
  std::shared_ptr<nn::FullConnect> fc_;
};

// Five 3x3 convolutions (32, 64, 96, 96, 64 channels) with pooling after the
// first, second and fifth, then fc 1024->256 and 256->10. Every hidden layer
// is followed by an affine BatchNorm and leakyRelu.
class AlexNetSmall final : public nn::Module {
 public:
  AlexNetSmall();

 protected:
  std::vector<Tensor> forward_impl(const std::vector<Tensor>& x) override;

 private:
  std::shared_ptr<nn::Sequence> features_;
  std::shared_ptr<nn::Sequence> classifier_;
};

const std::vector<std::string>& model_names();
// Unknown names raise an argument error. The model is not initialized.
std::shared_ptr<nn::Module> build_model(const std::string& name);
// Built and initialized with weights drawn from `seed`.
std::shared_ptr<nn::Module> build_model(const std::string& name, Engine& engine, std::uint64_t seed);

std::int64_t parameter_count(nn::Unit& model);

}  // namespace tensorforge::app
