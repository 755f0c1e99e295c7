#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "support.hpp"
#include "tensorforge/nn/functional.hpp"

using namespace tensorforge;
using backend::ConvAlgorithm;
using support::kind_of;

namespace {

constexpr double kTol = 1e-3;
constexpr int kCases = 6;

template <typename F>
void sweep(std::uint64_t seed, F&& one) {
  Engine eng;
  Rng rng(seed);
  for (int i = 0; i < kCases; ++i) {
    const gradcheck::Outcome o = one(eng, rng);
    EXPECT_LE(o.error, kTol) << o.shape;
  }
}

}  // namespace

// -- gradient checks ---------------------------------------------------------

TEST(GradCheck, ConvWithoutBiasGeneralPath) {
  sweep(71, [](Engine& e, Rng& r) { return gradcheck::conv(e, r, false, ConvAlgorithm::general_im2col); });
}
TEST(GradCheck, ConvWithBiasGeneralPath) {
  sweep(72, [](Engine& e, Rng& r) { return gradcheck::conv(e, r, true, ConvAlgorithm::general_im2col); });
}
TEST(GradCheck, ConvWithoutBiasDirectPath) {
  sweep(73, [](Engine& e, Rng& r) { return gradcheck::conv(e, r, false, ConvAlgorithm::small_feature_direct); });
}
TEST(GradCheck, ConvWithBiasDirectPath) {
  sweep(74, [](Engine& e, Rng& r) { return gradcheck::conv(e, r, true, ConvAlgorithm::small_feature_direct); });
}
TEST(GradCheck, BatchNormAffine) {
  sweep(75, [](Engine& e, Rng& r) { return gradcheck::batchnorm(e, r, true); });
}
TEST(GradCheck, BatchNormPlain) {
  sweep(76, [](Engine& e, Rng& r) { return gradcheck::batchnorm(e, r, false); });
}
TEST(GradCheck, FullConnectBothBiasSettings) {
  sweep(77, [](Engine& e, Rng& r) { return gradcheck::fullconnect(e, r, true); });
  sweep(78, [](Engine& e, Rng& r) { return gradcheck::fullconnect(e, r, false); });
}
TEST(GradCheck, MaxPoolWindowedAndAdaptive) {
  sweep(79, [](Engine& e, Rng& r) { return gradcheck::maxpool(e, r, false); });
  sweep(80, [](Engine& e, Rng& r) { return gradcheck::maxpool(e, r, true); });
}
TEST(GradCheck, Activations) {
  sweep(81, [](Engine& e, Rng& r) { return gradcheck::activation(e, r, false); });
  sweep(82, [](Engine& e, Rng& r) { return gradcheck::activation(e, r, true); });
}
TEST(GradCheck, AddAndFlatten) {
  sweep(83, [](Engine& e, Rng& r) { return gradcheck::add(e, r); });
  sweep(84, [](Engine& e, Rng& r) { return gradcheck::flatten(e, r); });
}
TEST(GradCheck, ResidualBlock) {
  sweep(85, [](Engine& e, Rng& r) { return gradcheck::block(e, r, true); });
  sweep(86, [](Engine& e, Rng& r) { return gradcheck::block(e, r, false); });
}

TEST(GradCheck, ConvSpecificInstance) {
  // [1,4,4,2] -> 3 channels, k3 s1 p1
  Engine eng;
  Rng rng(87);
  auto unit = nn::conv3D(false, 2, 3, 3, 1, 1);
  unit->init(eng, "c", 1);
  const oracle::Dims xs{1, 4, 4, 2};
  const oracle::Conv cd{2, 3, 3, 1, 1};
  const auto w = gradcheck::get(unit->weight().value);
  const auto x = oracle::rounded(oracle::random_vec(rng, xs.size()));
  const auto r = oracle::rounded(oracle::random_vec(rng, 4 * 4 * 3));
  unit->forward(gradcheck::put(eng, x, {1, 4, 4, 2}, true));
  const auto dx = gradcheck::get(unit->backward(gradcheck::put(eng, r, {1, 4, 4, 3})));
  EXPECT_LE(oracle::max_rel_error(dx, oracle::numeric_grad([&](const oracle::Vec& v) {
              return oracle::dot(oracle::conv2d(v, xs, w, cd), r);
            }, x)),
            kTol);
}

// -- conv3D ------------------------------------------------------------------

TEST(Conv3D, ResnetStemAndDownsampleShapes) {
  Engine eng;
  auto stem = nn::conv3D(false, 3, 64, 3, 1, 1);
  auto down = nn::conv3D(false, 64, 128, 3, 2, 1);
  stem->init(eng);
  down->init(eng);
  const Tensor y = stem->forward(eng.zeros({2, 32, 32, 3}));
  EXPECT_EQ(y.shape(), (Shape{2, 32, 32, 64}));
  stem->gc();
  EXPECT_EQ(down->forward(eng.zeros({2, 32, 32, 64})).shape(), (Shape{2, 16, 16, 128}));
  EXPECT_EQ(stem->weight().value.shape(), (Shape{64, 3, 3, 3}));
}

TEST(Conv3D, ChannelMismatchIsShapeError) {
  Engine eng;
  auto c = nn::conv3D(false, 3, 4, 3, 1, 1);
  c->init(eng);
  EXPECT_EQ(kind_of([&] { c->forward(eng.zeros({1, 4, 4, 5})); }), ErrorKind::shape);
}

TEST(Conv3D, BiasFusionMatchesSeparateAdd) {
  Engine eng;
  Rng rng(88);
  auto with = nn::conv3D(true, 3, 5, 3, 1, 1), without = nn::conv3D(false, 3, 5, 3, 1, 1);
  with->init(eng, "", 4);
  without->init(eng, "", 5);
  eng.assign(without->weight().value, with->weight().value.to_host());
  const Tensor x = eng.from_host(oracle::to_float(oracle::random_vec(rng, 2 * 5 * 5 * 3)), {2, 5, 5, 3});
  const auto fused = with->forward(x).to_host();
  const auto plain = without->forward(x).to_host();
  const auto b = with->bias().value.to_host();
  for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_FLOAT_EQ(fused[i], plain[i] + b[i % 5]);
}

// -- batchNorm ---------------------------------------------------------------

TEST(BatchNorm, InferenceWithInitialStatistics) {
  Engine eng;
  Rng rng(89);
  auto bn = nn::batchNorm(true, 3);
  bn->init(eng);
  bn->eval();
  const auto x = oracle::to_float(oracle::random_vec(rng, 4 * 3));
  const auto y = bn->forward(eng.from_host(x, {4, 3})).to_host();
  const double eps = bn->hyper().eps;
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] / std::sqrt(1.0 + eps), 1e-6);
}

TEST(BatchNorm, RunningMeanMovesByMomentum) {
  Engine eng;
  auto bn = nn::batchNorm(false, 2);
  bn->init(eng);
  EXPECT_FLOAT_EQ(bn->hyper().momentum, 0.1f);
  const std::vector<float> x{1, 10, 3, 20, 5, 30};
  bn->forward(eng.from_host(x, {3, 2}));
  const auto rm = bn->running_mean().to_host();
  EXPECT_NEAR(rm[0], 0.1 * 3.0, 1e-6);
  EXPECT_NEAR(rm[1], 0.1 * 20.0, 1e-6);
  bn->gc();
}

TEST(BatchNorm, TrainOutputHasUnitStatistics) {
  Engine eng;
  Rng rng(90);
  auto bn = nn::batchNorm(true, 6);
  bn->init(eng);
  const std::int64_t rows = 2 * 5 * 5;
  const auto x = oracle::random_vec(rng, rows * 6, -4.0, 9.0);
  const auto y = oracle::to_double(bn->forward(eng.from_host(oracle::to_float(x), {2, 5, 5, 6})).to_host());
  const auto s = oracle::bn_stats(y, rows, 6);
  for (std::size_t j = 0; j < 6; ++j) {
    EXPECT_LE(std::abs(s.mean[j]), 1e-3);
    EXPECT_LE(std::abs(s.var[j] - 1.0), 1e-2);
  }
}

TEST(BatchNorm, ParametersStartAtOneAndZero) {
  Engine eng;
  auto bn = nn::batchNorm(true, 5);
  bn->init(eng, "bn", 123);
  for (float v : bn->gamma().value.to_host()) EXPECT_EQ(v, 1.0f);
  for (float v : bn->beta().value.to_host()) EXPECT_EQ(v, 0.0f);
  for (float v : bn->running_var().to_host()) EXPECT_EQ(v, 1.0f);
  auto plain = nn::batchNorm(false, 5);
  plain->init(eng);
  EXPECT_TRUE(plain->params().empty());
}

TEST(BatchNorm, ChannelMismatchIsShapeError) {
  Engine eng;
  auto bn = nn::batchNorm(false, 4);
  bn->init(eng);
  EXPECT_EQ(kind_of([&] { bn->forward(eng.zeros({2, 3})); }), ErrorKind::shape);
}

// -- fullconnect -------------------------------------------------------------

TEST(FullConnect, ClassifierHeadShape) {
  Engine eng;
  auto fc = nn::fullconnect(true, 256, 10);
  fc->init(eng);
  EXPECT_EQ(fc->forward(eng.zeros({7, 256})).shape(), (Shape{7, 10}));
}

TEST(FullConnect, IdentityWeights) {
  Engine eng;
  auto fc = nn::fullconnect(true, 3, 3);
  fc->init(eng);
  eng.assign(fc->weight().value, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  eng.fill(fc->bias().value, 0.0f);
  const std::vector<float> x{1, 2, 3, 4, 5, 6};
  EXPECT_EQ(fc->forward(eng.from_host(x, {2, 3})).to_host(), x);
}

TEST(FullConnect, FeatureMismatchIsShapeError) {
  Engine eng;
  auto fc = nn::fullconnect(true, 3, 2);
  fc->init(eng);
  EXPECT_EQ(kind_of([&] { fc->forward(eng.zeros({2, 4})); }), ErrorKind::shape);
}

// -- pooling -----------------------------------------------------------------

TEST(Pool, AdaptiveToOne) {
  Engine eng;
  const Tensor y = F::adaptive_maxPool2D(1, eng.zeros({3, 8, 8, 256}));
  EXPECT_EQ(y.shape(), (Shape{3, 1, 1, 256}));
}

TEST(Pool, AdaptiveTargetEqualToExtentIsIdentity) {
  Engine eng;
  Rng rng(91);
  const auto x = oracle::to_float(oracle::random_vec(rng, 2 * 5 * 5 * 3));
  EXPECT_EQ(F::adaptive_maxPool2D(5, eng.from_host(x, {2, 5, 5, 3})).to_host(), x);
}

TEST(Pool, BackwardScattersToArgmaxOnly) {
  Engine eng;
  auto pool = nn::maxPool2D(2, 2);
  pool->init(eng);
  // [1,2,4,1]: windows {0,1,4,5} and {2,3,6,7}
  Tensor x = eng.from_host(std::vector<float>{1, 9, 3, 2, 4, 0, 8, 5}, {1, 2, 4, 1});
  x.requires_grad(true);
  pool->forward(x);
  const auto dx = pool->backward(eng.from_host(std::vector<float>{10, 20}, {1, 1, 2, 1})).to_host();
  EXPECT_EQ(dx, (std::vector<float>{0, 10, 0, 0, 0, 0, 20, 0}));
}

TEST(Pool, InvalidTargetIsRejected) {
  Engine eng;
  EXPECT_TRUE(kind_of([&] { F::adaptive_maxPool2D(0, eng.zeros({1, 4, 4, 1})); }).has_value());
  EXPECT_TRUE(kind_of([&] { F::maxPool2D(eng.zeros({1, 2, 2, 1}), 3, 1); }).has_value());
}

// -- functional, sequence, add -----------------------------------------------

TEST(Functional, LeakyReluMatchesUnitForm) {
  Engine eng;
  Rng rng(92);
  const Tensor x = eng.from_host(oracle::to_float(oracle::random_vec(rng, 37)), {37});
  auto unit = nn::leakyRelu(0.2f);
  unit->init(eng);
  EXPECT_EQ(F::leakyRelu(x, 0.2f).to_host(), unit->forward(x).to_host());
  EXPECT_EQ(kind_of([] { nn::leakyRelu(-1.0f); }), ErrorKind::argument);
}

TEST(Sequence, ComposesInOrder) {
  Engine eng;
  Rng rng(93);
  auto conv = nn::conv3D(false, 2, 3, 3, 1, 1);
  auto bn = nn::batchNorm(false, 3);
  auto seq = nn::sequence(conv, bn);
  seq->init(eng, "seq", 6);
  const Tensor x = eng.from_host(oracle::to_float(oracle::random_vec(rng, 2 * 4 * 4 * 2)), {2, 4, 4, 2});
  const auto composed = seq->forward(x).to_host();
  seq->gc();
  eng.assign(bn->running_mean(), std::vector<float>(3, 0.0f));
  const auto manual = bn->forward(conv->forward(x)).to_host();
  EXPECT_EQ(composed, manual);
  EXPECT_EQ(seq->size(), 2u);
  std::vector<std::string> names;
  for (auto* p : seq->params()) names.push_back(p->name);
  EXPECT_EQ(names, (std::vector<std::string>{"seq.0.weight"}));
}

TEST(Add, GradientIsOneOnBothBranches) {
  Engine eng;
  auto add = nn::add();
  add->init(eng);
  Tensor a = eng.from_host(std::vector<float>{1, 2}, {2}), b = eng.from_host(std::vector<float>{3, 4}, {2});
  a.requires_grad(true);
  b.requires_grad(true);
  EXPECT_EQ(add->forward(std::vector<Tensor>{a, b})[0].to_host(), (std::vector<float>{4, 6}));
  const auto d = add->backward(std::vector<Tensor>{eng.full({2}, 1.0f)});
  EXPECT_EQ(d[0].to_host(), (std::vector<float>{1, 1}));
  EXPECT_EQ(d[1].to_host(), (std::vector<float>{1, 1}));
  EXPECT_EQ(kind_of([&] { F::add(a, eng.zeros({3})); }), ErrorKind::shape);
}

TEST(Purity, RepeatedForwardIsIdentical) {
  Engine eng;
  Rng rng(94);
  auto net = nn::sequence(nn::conv3D(true, 3, 4, 3, 1, 1), nn::leakyRelu(), nn::maxPool2D(2, 2), nn::flatten(),
                          nn::fullconnect(true, 4 * 3 * 3, 5));
  net->init(eng, "", 8);
  net->eval();
  const Tensor x = eng.from_host(oracle::to_float(oracle::random_vec(rng, 2 * 6 * 6 * 3)), {2, 6, 6, 3});
  const auto first = net->forward(x).to_host();
  net->gc();
  EXPECT_EQ(net->forward(x).to_host(), first);
}
