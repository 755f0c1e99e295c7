#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstring>
#include <thread>

#include "oracle.hpp"
#include "tensorforge/backend/cpu_backend.hpp"
#include "tensorforge/backend/kernels.hpp"
#include "tensorforge/error.hpp"

using namespace tensorforge;
using namespace tensorforge::backend;

namespace {

class CpuBackendTest : public ::testing::Test {
 protected:
  CpuBackend be{{"test", 16, 4}};

  DeviceBuffer put(const std::vector<float>& v) {
    DeviceBuffer b = be.alloc(v.size() * sizeof(float));
    be.write(b, 0, std::as_bytes(std::span<const float>(v)));
    return b;
  }
  std::vector<float> get(const DeviceBuffer& b, std::size_t count) {
    std::vector<float> out(count);
    be.read(b, 0, std::as_writable_bytes(std::span<float>(out)));
    return out;
  }
};

// logical [rows, cols] -> padded physical
std::vector<float> pad(const std::vector<float>& v, std::int64_t rows, std::int64_t cols) {
  const std::int64_t ld = padded_extent(cols);
  std::vector<float> p(static_cast<std::size_t>(rows * ld), 0.0f);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) p[static_cast<std::size_t>(r * ld + c)] = v[static_cast<std::size_t>(r * cols + c)];
  return p;
}

std::vector<float> unpad(const std::vector<float>& p, std::int64_t rows, std::int64_t cols) {
  const std::int64_t ld = padded_extent(cols);
  std::vector<float> v(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) v[static_cast<std::size_t>(r * cols + c)] = p[static_cast<std::size_t>(r * ld + c)];
  return v;
}

bool pad_lanes_zero(const std::vector<float>& p, std::int64_t rows, std::int64_t cols) {
  const std::int64_t ld = padded_extent(cols);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = cols; c < ld; ++c)
      if (p[static_cast<std::size_t>(r * ld + c)] != 0.0f) return false;
  return true;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::state;
}

}  // namespace

// -- memory ------------------------------------------------------------------

TEST_F(CpuBackendTest, ZeroByteAllocationIsValidButEmpty) {
  DeviceBuffer b = be.alloc(0);
  EXPECT_EQ(b.capacity_bytes, 0u);
  EXPECT_TRUE(be.is_live(b));
  EXPECT_EQ(kind_of([&] { be.write(b, 0, std::as_bytes(std::span<const float>(std::vector<float>{1.0f}))); }),
            ErrorKind::bounds);
  be.free(b);
}

TEST_F(CpuBackendTest, CapacityRoundsUpToAlignment) {
  DeviceBuffer b = be.alloc(1000);
  EXPECT_EQ(b.capacity_bytes, (1000 + 15) / 16 * 16);
  EXPECT_EQ(b.capacity_bytes, 1008u);
  be.free(b);
}

TEST_F(CpuBackendTest, HandlesAreDistinctAndZeroed) {
  DeviceBuffer a = be.alloc(64), b = be.alloc(64);
  EXPECT_NE(a.handle, b.handle);
  for (float v : get(a, 16)) EXPECT_EQ(v, 0.0f);
  be.free(a);
  be.free(b);
}

TEST_F(CpuBackendTest, DoubleFreeIsInvalidHandle) {
  DeviceBuffer b = be.alloc(64);
  be.free(b);
  EXPECT_EQ(kind_of([&] { be.free(b); }), ErrorKind::invalid_handle);
}

TEST_F(CpuBackendTest, AllocationCountReturnsToBaseline) {
  const auto base = be.allocation_stats();
  DeviceBuffer a = be.alloc(64), b = be.alloc(128);
  EXPECT_EQ(be.allocation_stats().live_buffers, base.live_buffers + 2);
  be.free(a);
  be.free(b);
  EXPECT_EQ(be.allocation_stats().live_buffers, base.live_buffers);
  EXPECT_EQ(be.allocation_stats().live_bytes, base.live_bytes);
}

TEST(CpuBackendLimit, RefusedRequestIsAllocationFailure) {
  CpuBackend small({"small", 16, 2}, 1024);
  EXPECT_EQ(kind_of([&] { small.alloc(4096); }), ErrorKind::allocation_failure);
}

// -- copies and streams ------------------------------------------------------

TEST_F(CpuBackendTest, ZeroByteCopyCompletesAndLeavesDestination) {
  DeviceBuffer d = put({1, 2, 3, 4});
  const StreamId s = be.create_stream();
  std::vector<std::byte> none;
  auto e = be.copy_to_device(none, d, 0, s);
  e.wait();
  EXPECT_EQ(e.state(), EventState::done);
  EXPECT_EQ(get(d, 4), (std::vector<float>{1, 2, 3, 4}));
  be.destroy_stream(s);
  be.free(d);
}

TEST_F(CpuBackendTest, HostDeviceHostRoundTripIsByteExact) {
  Rng rng(11);
  std::vector<std::byte> src(777), back(777);
  for (auto& b : src) b = static_cast<std::byte>(rng.next_below(256));
  DeviceBuffer d = be.alloc(src.size());
  const StreamId s = be.create_stream();
  be.copy_to_device(src, d, src.size(), s);
  be.copy_to_host(d, back, back.size(), s).wait();
  EXPECT_EQ(0, std::memcmp(src.data(), back.data(), src.size()));
  DeviceBuffer e = be.alloc(src.size());
  be.copy(d, e, src.size(), s).wait();
  std::vector<std::byte> again(777);
  be.read(e, 0, again);
  EXPECT_EQ(0, std::memcmp(src.data(), again.data(), src.size()));
  be.destroy_stream(s);
  be.free(d);
  be.free(e);
}

TEST_F(CpuBackendTest, CopyBeyondCapacityIsBoundsError) {
  DeviceBuffer d = be.alloc(16);
  std::vector<std::byte> big(64);
  const StreamId s = be.create_stream();
  EXPECT_EQ(kind_of([&] { be.copy_to_device(big, d, 64, s); }), ErrorKind::bounds);
  be.destroy_stream(s);
  be.free(d);
}

TEST_F(CpuBackendTest, StreamIsFifo) {
  const StreamId s = be.create_stream();
  std::vector<int> order;
  std::mutex m;
  for (int i = 0; i < 50; ++i) {
    be.enqueue(s, [&, i] {
      std::lock_guard lock(m);
      order.push_back(i);
    });
  }
  be.synchronize(s);
  ASSERT_EQ(order.size(), 50u);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(order[static_cast<std::size_t>(i)], i);
  be.destroy_stream(s);
}

TEST_F(CpuBackendTest, SecondKernelObservesFirstWrites) {
  const StreamId s = be.create_stream();
  DeviceBuffer a = be.alloc(16), b = be.alloc(16);
  be.enqueue(s, [&] { be.fill(a, {1, 4}, 5.0f); });
  auto e = be.enqueue(s, [&] { be.elementwise_binary(BinaryCode::add, a, a, {1, 4}, b); });
  e.wait();
  EXPECT_EQ(e.state(), EventState::done);
  EXPECT_EQ(get(b, 4), (std::vector<float>{10, 10, 10, 10}));
  be.destroy_stream(s);
  be.free(a);
  be.free(b);
}

TEST_F(CpuBackendTest, DestroyedStreamIsInvalidStream) {
  const StreamId s = be.create_stream();
  be.destroy_stream(s);
  EXPECT_EQ(kind_of([&] { be.enqueue(s, [] {}); }), ErrorKind::invalid_stream);
  EXPECT_EQ(kind_of([&] { be.synchronize(s); }), ErrorKind::invalid_stream);
}

TEST_F(CpuBackendTest, ThrowingTaskFailsOnlyItsEvent) {
  const StreamId s = be.create_stream();
  auto bad = be.enqueue(s, [] { throw Error(ErrorKind::shape, "boom"); });
  auto good = be.enqueue(s, [] {});
  good.wait();
  EXPECT_EQ(bad.state(), EventState::failed);
  EXPECT_EQ(kind_of([&] { bad.wait(); }), ErrorKind::shape);
  be.destroy_stream(s);
}

TEST_F(CpuBackendTest, StreamLimitIsArgumentError) {
  std::vector<StreamId> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(be.create_stream());
  EXPECT_EQ(kind_of([&] { be.create_stream(); }), ErrorKind::argument);
  for (auto id : ids) be.destroy_stream(id);
}

TEST_F(CpuBackendTest, ThreeIndependentStreamsMatchSerialExecution) {
  // conv, sigmoid and a transposed matmul on three streams
  Rng rng(3);
  const oracle::Dims xs{1, 6, 6, 3};
  const auto x = oracle::random_vec(rng, xs.size());
  const auto w = oracle::random_vec(rng, 4 * 9 * 3);
  const auto a = oracle::random_vec(rng, 5 * 3), b = oracle::random_vec(rng, 5 * 2);
  const ConvDescriptor cd = ConvDescriptor::square(3, 4, 3, 1, 1);

  auto run = [&](bool parallel) {
    DeviceBuffer bx = put(pad(oracle::to_float(x), 36, 3)), bw = put(pad(oracle::to_float(w), 36, 3));
    DeviceBuffer ba = put(pad(oracle::to_float(a), 5, 3)), bb = put(pad(oracle::to_float(b), 5, 2));
    DeviceBuffer y1 = be.alloc(36 * 4 * 4), y2 = be.alloc(36 * 4 * 4), y3 = be.alloc(3 * 4 * 4);
    std::vector<Task> tasks{
        [&] { be.conv2d_forward(bx, {1, 6, 6, 3}, bw, cd, nullptr, y1, ConvAlgorithm::automatic); },
        [&] { be.elementwise_unary({UnaryCode::sigmoid_fwd, 1.0f}, bx, nullptr, {36, 3}, y2); },
        [&] { be.gemm(ba, {5, 3}, true, bb, {5, 2}, false, nullptr, y3); }};
    if (parallel) {
      std::vector<StreamId> ss;
      std::vector<CompletionEvent> es;
      for (auto& t : tasks) {
        ss.push_back(be.create_stream());
        es.push_back(be.enqueue(ss.back(), t));
      }
      for (auto& e : es) e.wait();
      for (auto s : ss) be.destroy_stream(s);
    } else {
      for (auto& t : tasks) t();
    }
    std::vector<float> out = get(y1, 36 * 4);
    for (float v : get(y2, 36 * 4)) out.push_back(v);
    for (float v : get(y3, 3 * 4)) out.push_back(v);
    for (auto buf : {bx, bw, ba, bb, y1, y2, y3}) be.free(buf);
    return out;
  };
  const auto serial = run(false);
  const auto parallel = run(true);
  ASSERT_EQ(serial.size(), parallel.size());
  EXPECT_EQ(0, std::memcmp(serial.data(), parallel.data(), serial.size() * sizeof(float)));
}

// -- gemm --------------------------------------------------------------------

TEST(GemmKernel, IdentityTimesB) {
  const std::vector<float> eye = pad({1, 0, 0, 0, 1, 0, 0, 0, 1}, 3, 3);
  const std::vector<float> b = pad({1, 2, 3, 4, 5, 6}, 3, 2);
  std::vector<float> c(3 * 4, -1.0f);
  kernels::gemm(eye.data(), {3, 3}, false, b.data(), {3, 2}, false, nullptr, c.data());
  EXPECT_EQ(unpad(c, 3, 2), (std::vector<float>{1, 2, 3, 4, 5, 6}));
  EXPECT_TRUE(pad_lanes_zero(c, 3, 2));
}

TEST(GemmKernel, HandMultipliedProduct) {
  const auto a = pad({1, 2, 3, 4}, 2, 2), b = pad({5, 6}, 2, 1);
  std::vector<float> c(2 * 4);
  kernels::gemm(a.data(), {2, 2}, false, b.data(), {2, 1}, false, nullptr, c.data());
  EXPECT_EQ(unpad(c, 2, 1), (std::vector<float>{17, 39}));
}

TEST(GemmKernel, TransposeA) {
  const auto a = pad({1, 2, 3, 4}, 2, 2), b = pad({1, 0}, 2, 1);
  std::vector<float> c(2 * 4);
  kernels::gemm(a.data(), {2, 2}, true, b.data(), {2, 1}, false, nullptr, c.data());
  EXPECT_EQ(unpad(c, 2, 1), (std::vector<float>{1, 2}));
}

TEST(GemmKernel, RandomShapesAgainstDoubleOracle) {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto m = 1 + static_cast<std::int64_t>(rng.next_below(9));
    const auto k = 1 + static_cast<std::int64_t>(rng.next_below(9));
    const auto n = 1 + static_cast<std::int64_t>(rng.next_below(9));
    const bool ta = rng.next_below(2) == 1, tb = rng.next_below(2) == 1;
    const auto a = oracle::rounded(oracle::random_vec(rng, m * k));  // logical [m,k]
    const auto b = oracle::rounded(oracle::random_vec(rng, k * n));
    const auto bias = oracle::rounded(oracle::random_vec(rng, n));
    const auto as = ta ? oracle::transpose(a, m, k) : a;  // stored form
    const auto bs = tb ? oracle::transpose(b, k, n) : b;
    const MatShape ash = ta ? MatShape{k, m} : MatShape{m, k};
    const MatShape bsh = tb ? MatShape{n, k} : MatShape{k, n};
    const auto pa = pad(oracle::to_float(as), ash.rows, ash.cols), pb = pad(oracle::to_float(bs), bsh.rows, bsh.cols);
    const auto pbias = pad(oracle::to_float(bias), 1, n);
    std::vector<float> c(static_cast<std::size_t>(m * padded_extent(n)), 7.0f);
    kernels::gemm(pa.data(), ash, ta, pb.data(), bsh, tb, pbias.data(), c.data());
    const auto ref = oracle::matmul(a, b, m, k, n, &bias);
    EXPECT_LE(oracle::max_rel_error(oracle::to_double(unpad(c, m, n)), ref), 1e-5);
    EXPECT_TRUE(pad_lanes_zero(c, m, n));
  }
}

// -- convolution -------------------------------------------------------------

namespace {

struct ConvCase {
  oracle::Dims xs;
  oracle::Conv cd;
};

std::vector<float> conv_run(const ConvCase& k, const oracle::Vec& x, const oracle::Vec& w, ConvAlgorithm algo,
                            const oracle::Vec* bias = nullptr) {
  const Nhwc xs{k.xs.n, k.xs.h, k.xs.w, k.xs.c};
  const auto desc = ConvDescriptor::square(k.cd.in_c, k.cd.out_c, k.cd.k, k.cd.stride, k.cd.pad);
  const Nhwc ys = desc.output_shape(xs);
  const auto px = pad(oracle::to_float(x), xs.positions(), xs.c);
  const auto pw = pad(oracle::to_float(w), k.cd.out_c * k.cd.k * k.cd.k, k.cd.in_c);
  std::vector<float> pbias;
  if (bias) pbias = pad(oracle::to_float(*bias), 1, k.cd.out_c);
  std::vector<float> y(static_cast<std::size_t>(ys.physical_elements()), 3.0f);
  kernels::conv2d_forward(px.data(), xs, pw.data(), desc, bias ? pbias.data() : nullptr, y.data(), algo);
  EXPECT_TRUE(pad_lanes_zero(y, ys.positions(), ys.c));
  return unpad(y, ys.positions(), ys.c);
}

}  // namespace

TEST(ConvKernel, StemAndDownsampleShapes) {
  const auto desc = ConvDescriptor::square(3, 64, 3, 1, 1);
  EXPECT_EQ(desc.output_shape({512, 32, 32, 3}), (Nhwc{512, 32, 32, 64}));
  EXPECT_EQ(ConvDescriptor::square(64, 128, 3, 2, 1).output_shape({8, 32, 32, 64}), (Nhwc{8, 16, 16, 128}));
}

TEST(ConvKernel, IdentityOneByOne) {
  Rng rng(1);
  const ConvCase k{{2, 3, 3, 4}, {4, 4, 1, 1, 0}};
  const auto x = oracle::rounded(oracle::random_vec(rng, k.xs.size()));
  oracle::Vec w(16, 0.0);
  for (int i = 0; i < 4; ++i) w[static_cast<std::size_t>(i * 4 + i)] = 1.0;
  for (auto algo : {ConvAlgorithm::general_im2col, ConvAlgorithm::small_feature_direct}) {
    EXPECT_EQ(oracle::to_double(conv_run(k, x, w, algo)), x);
  }
}

TEST(ConvKernel, MatchesNaiveLoopBothPaths) {
  Rng rng(2);
  const ConvCase k{{2, 5, 5, 3}, {3, 4, 3, 1, 1}};
  const auto x = oracle::rounded(oracle::random_vec(rng, k.xs.size()));
  const auto w = oracle::rounded(oracle::random_vec(rng, 4 * 9 * 3));
  const auto bias = oracle::rounded(oracle::random_vec(rng, 4));
  const auto ref = oracle::conv2d(x, k.xs, w, k.cd, &bias);
  for (auto algo : {ConvAlgorithm::general_im2col, ConvAlgorithm::small_feature_direct}) {
    EXPECT_LE(oracle::max_rel_error(oracle::to_double(conv_run(k, x, w, algo, &bias)), ref), 1e-5);
  }
}

TEST(ConvKernel, DispatchFollowsThreshold) {
  const auto d = ConvDescriptor::square(8, 8, 3, 1, 1);
  EXPECT_EQ(kernels::resolve_conv_algorithm(d, {1, 8, 8, 8}, 64), ConvAlgorithm::small_feature_direct);
  EXPECT_EQ(kernels::resolve_conv_algorithm(d, {1, 8, 9, 8}, 64), ConvAlgorithm::general_im2col);
  auto forced = d;
  forced.algorithm = ConvAlgorithm::general_im2col;
  EXPECT_EQ(kernels::resolve_conv_algorithm(forced, {1, 2, 2, 8}, 64), ConvAlgorithm::general_im2col);
}

TEST(ConvKernel, BackwardDataZeroAndOneByOne) {
  Rng rng(4);
  const Nhwc xs{1, 3, 3, 2};
  const auto desc = ConvDescriptor::square(2, 3, 1, 1, 0);
  const auto w = oracle::rounded(oracle::random_vec(rng, 3 * 2));
  const auto dy = oracle::rounded(oracle::random_vec(rng, 9 * 3));
  const auto pw = pad(oracle::to_float(w), 3, 2);
  for (auto algo : {ConvAlgorithm::general_im2col, ConvAlgorithm::small_feature_direct}) {
    std::vector<float> zeros(9 * 4, 0.0f), dx(9 * 4, 1.0f);
    kernels::conv2d_backward_data(zeros.data(), {1, 3, 3, 3}, pw.data(), desc, dx.data(), xs, algo);
    for (float v : dx) EXPECT_EQ(v, 0.0f);
    const auto pdy = pad(oracle::to_float(dy), 9, 3);
    kernels::conv2d_backward_data(pdy.data(), {1, 3, 3, 3}, pw.data(), desc, dx.data(), xs, algo);
    const auto got = unpad(dx, 9, 2);
    for (int p = 0; p < 9; ++p)
      for (int ic = 0; ic < 2; ++ic) {
        double s = 0.0;
        for (int oc = 0; oc < 3; ++oc) s += dy[static_cast<std::size_t>(p * 3 + oc)] * w[static_cast<std::size_t>(oc * 2 + ic)];
        EXPECT_NEAR(got[static_cast<std::size_t>(p * 2 + ic)], s, 1e-6);
      }
  }
}

TEST(ConvKernel, BackwardFilterZeroAndOuterProduct) {
  const Nhwc xs{1, 1, 1, 3};
  const auto desc = ConvDescriptor::square(3, 2, 1, 1, 0);
  const auto px = pad({1, 2, 3}, 1, 3), pdy = pad({4, 5}, 1, 2), pz = pad({0, 0}, 1, 2);
  for (auto algo : {ConvAlgorithm::general_im2col, ConvAlgorithm::small_feature_direct}) {
    std::vector<float> dw(2 * 4, 9.0f);
    kernels::conv2d_backward_filter(px.data(), xs, pz.data(), {1, 1, 1, 2}, desc, dw.data(), algo);
    for (float v : dw) EXPECT_EQ(v, 0.0f);
    kernels::conv2d_backward_filter(px.data(), xs, pdy.data(), {1, 1, 1, 2}, desc, dw.data(), algo);
    EXPECT_EQ(unpad(dw, 2, 3), (std::vector<float>{4, 8, 12, 5, 10, 15}));
  }
}

TEST(ConvKernel, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  for (int t = 0; t < 6; ++t) {
    const ConvCase k{{1 + static_cast<std::int64_t>(rng.next_below(2)), 4, 5, 2},
                     {2, 3, 1 + static_cast<std::int64_t>(rng.next_below(3)), 1 + static_cast<std::int64_t>(rng.next_below(2)),
                      static_cast<std::int64_t>(rng.next_below(2))}};
    const auto desc = ConvDescriptor::square(k.cd.in_c, k.cd.out_c, k.cd.k, k.cd.stride, k.cd.pad);
    const Nhwc xs{k.xs.n, k.xs.h, k.xs.w, k.xs.c};
    const Nhwc ys = desc.output_shape(xs);
    const auto x = oracle::rounded(oracle::random_vec(rng, k.xs.size()));
    const auto w = oracle::rounded(oracle::random_vec(rng, k.cd.out_c * k.cd.k * k.cd.k * k.cd.in_c));
    const auto r = oracle::rounded(oracle::random_vec(rng, ys.positions() * ys.c));
    const auto fd_x = oracle::numeric_grad([&](const oracle::Vec& v) { return oracle::dot(oracle::conv2d(v, k.xs, w, k.cd), r); }, x);
    const auto fd_w = oracle::numeric_grad([&](const oracle::Vec& v) { return oracle::dot(oracle::conv2d(x, k.xs, v, k.cd), r); }, w);
    const auto pr = pad(oracle::to_float(r), ys.positions(), ys.c);
    const auto pw = pad(oracle::to_float(w), k.cd.out_c * k.cd.k * k.cd.k, k.cd.in_c);
    const auto px = pad(oracle::to_float(x), xs.positions(), xs.c);
    for (auto algo : {ConvAlgorithm::general_im2col, ConvAlgorithm::small_feature_direct}) {
      std::vector<float> dx(static_cast<std::size_t>(xs.physical_elements()));
      std::vector<float> dw(static_cast<std::size_t>(k.cd.out_c * k.cd.k * k.cd.k * 4));
      kernels::conv2d_backward_data(pr.data(), ys, pw.data(), desc, dx.data(), xs, algo);
      kernels::conv2d_backward_filter(px.data(), xs, pr.data(), ys, desc, dw.data(), algo);
      EXPECT_LE(oracle::max_rel_error(oracle::to_double(unpad(dx, xs.positions(), xs.c)), fd_x), 1e-3);
      EXPECT_LE(oracle::max_rel_error(oracle::to_double(unpad(dw, k.cd.out_c * k.cd.k * k.cd.k, k.cd.in_c)), fd_w), 1e-3);
    }
  }
}

TEST_F(CpuBackendTest, ConvGeometryErrorsAreShapeErrors) {
  DeviceBuffer x = be.alloc(4 * 4 * 4 * 4), w = be.alloc(4 * 9 * 4 * 4), y = be.alloc(4 * 4 * 4 * 4);
  const auto bad = ConvDescriptor::square(3, 4, 3, 1, 1);
  EXPECT_EQ(kind_of([&] { be.conv2d_forward(x, {1, 4, 4, 4}, w, bad, nullptr, y, ConvAlgorithm::automatic); }),
            ErrorKind::shape);
  be.free(x);
  be.free(w);
  be.free(y);
}

// -- batch normalization -----------------------------------------------------

TEST(BatchNormKernel, ConstantChannelNormalizesToZero) {
  std::vector<float> x = pad({3, 3, 3, 3, 3, 3}, 3, 2), y(12), rm(4, 0.0f), rv(4, 1.0f), sm(4), si(4);
  kernels::batchnorm_forward_train(x.data(), {3, 2}, nullptr, nullptr, rm.data(), rv.data(), {1e-5f, 0.1f}, y.data(),
                                   sm.data(), si.data());
  for (float v : y) EXPECT_NEAR(v, 0.0f, 1e-6);
}

TEST(BatchNormKernel, TwoValuesMapToPlusMinusOne) {
  std::vector<float> x = pad({0, 2}, 2, 1), y(8), rm(4, 0.0f), rv(4, 1.0f), sm(4), si(4);
  kernels::batchnorm_forward_train(x.data(), {2, 1}, nullptr, nullptr, rm.data(), rv.data(), {1e-12f, 0.1f}, y.data(),
                                   sm.data(), si.data());
  EXPECT_NEAR(y[0], -1.0f, 1e-6);
  EXPECT_NEAR(y[4], 1.0f, 1e-6);
  // running stats move by the momentum factor
  EXPECT_NEAR(rm[0], 0.1f * 1.0f, 1e-7);
  EXPECT_NEAR(rv[0], 0.9f * 1.0f + 0.1f * 1.0f, 1e-7);
}

TEST(BatchNormKernel, RandomInputHasUnitStatistics) {
  Rng rng(8);
  const std::int64_t rows = 256, c = 5;
  const auto x = oracle::random_vec(rng, rows * c, -3.0, 5.0);
  auto px = pad(oracle::to_float(x), rows, c);
  std::vector<float> y(px.size()), rm(8, 0.0f), rv(8, 1.0f), sm(8), si(8);
  kernels::batchnorm_forward_train(px.data(), {rows, c}, nullptr, nullptr, rm.data(), rv.data(), {1e-8f, 0.1f},
                                   y.data(), sm.data(), si.data());
  const auto s = oracle::bn_stats(oracle::to_double(unpad(y, rows, c)), rows, c);
  for (std::int64_t j = 0; j < c; ++j) {
    EXPECT_LE(std::abs(s.mean[static_cast<std::size_t>(j)]), 1e-3);
    EXPECT_LE(std::abs(s.var[static_cast<std::size_t>(j)] - 1.0), 1e-2);
  }
  EXPECT_TRUE(pad_lanes_zero(y, rows, c));
}

TEST(BatchNormKernel, BackwardZeroGradient) {
  Rng rng(9);
  const auto x = pad(oracle::to_float(oracle::random_vec(rng, 6 * 3)), 6, 3);
  std::vector<float> y(x.size()), rm(4, 0.0f), rv(4, 1.0f), sm(4), si(4), g(4, 1.0f);
  kernels::batchnorm_forward_train(x.data(), {6, 3}, g.data(), nullptr, rm.data(), rv.data(), {1e-8f, 0.1f}, y.data(),
                                   sm.data(), si.data());
  std::vector<float> dy(x.size(), 0.0f), dx(x.size(), 5.0f), dg(4, 5.0f), db(4, 5.0f);
  kernels::batchnorm_backward(dy.data(), x.data(), false, {6, 3}, g.data(), sm.data(), si.data(), dx.data(), dg.data(),
                              db.data());
  for (float v : dx) EXPECT_EQ(v, 0.0f);
  for (float v : dg) EXPECT_EQ(v, 0.0f);
  for (float v : db) EXPECT_EQ(v, 0.0f);
}

TEST(BatchNormKernel, ScalarClosedForm) {
  // M = 2, x = {1, 3}: mean 2, var 1, x_hat = {-1, 1}; dy = {1, 0}, gamma = 2
  // dbeta = 1, dgamma = -1, dx = gamma*inv_std/M * (M*dy - sum dy - x_hat*sum(dy*x_hat)) = {0, 0}
  const auto x = pad({1, 3}, 2, 1);
  std::vector<float> y(8), rm(4, 0.0f), rv(4, 1.0f), sm(4), si(4), g(4, 0.0f);
  g[0] = 2.0f;
  kernels::batchnorm_forward_train(x.data(), {2, 1}, g.data(), nullptr, rm.data(), rv.data(), {1e-12f, 0.1f}, y.data(),
                                   sm.data(), si.data());
  const auto dy = pad({1, 0}, 2, 1);
  std::vector<float> dx(8), dg(4), db(4);
  kernels::batchnorm_backward(dy.data(), x.data(), false, {2, 1}, g.data(), sm.data(), si.data(), dx.data(), dg.data(),
                              db.data());
  EXPECT_NEAR(db[0], 1.0f, 1e-6);
  EXPECT_NEAR(dg[0], -1.0f, 1e-6);
  EXPECT_NEAR(dx[0], 0.0f, 1e-6);
  EXPECT_NEAR(dx[4], 0.0f, 1e-6);
}

TEST(BatchNormKernel, BackwardMatchesFiniteDifferences) {
  Rng rng(10);
  const std::int64_t rows = 8, c = 3;
  const auto x = oracle::rounded(oracle::random_vec(rng, rows * c));
  const auto g = oracle::rounded(oracle::random_vec(rng, c, 0.5, 1.5));
  const auto b = oracle::rounded(oracle::random_vec(rng, c));
  const auto r = oracle::rounded(oracle::random_vec(rng, rows * c));
  const double eps = 1e-5;
  auto loss = [&](const oracle::Vec& xv, const oracle::Vec& gv, const oracle::Vec& bv) {
    return oracle::dot(oracle::batchnorm_train(xv, rows, c, &gv, &bv, eps), r);
  };
  const auto fd_x = oracle::numeric_grad([&](const oracle::Vec& v) { return loss(v, g, b); }, x);
  const auto fd_g = oracle::numeric_grad([&](const oracle::Vec& v) { return loss(x, v, b); }, g);
  const auto fd_b = oracle::numeric_grad([&](const oracle::Vec& v) { return loss(x, g, v); }, b);
  const auto px = pad(oracle::to_float(x), rows, c), pg = pad(oracle::to_float(g), 1, c), pb = pad(oracle::to_float(b), 1, c);
  const auto pr = pad(oracle::to_float(r), rows, c);
  std::vector<float> y(px.size()), rm(4, 0.0f), rv(4, 1.0f), sm(4), si(4), dx(px.size()), dg(4), db(4);
  kernels::batchnorm_forward_train(px.data(), {rows, c}, pg.data(), pb.data(), rm.data(), rv.data(),
                                   {static_cast<float>(eps), 0.1f}, y.data(), sm.data(), si.data());
  kernels::batchnorm_backward(pr.data(), px.data(), false, {rows, c}, pg.data(), sm.data(), si.data(), dx.data(),
                              dg.data(), db.data());
  EXPECT_LE(oracle::max_rel_error(oracle::to_double(unpad(dx, rows, c)), fd_x), 1e-3);
  EXPECT_LE(oracle::max_rel_error(oracle::to_double(unpad(dg, 1, c)), fd_g), 1e-3);
  EXPECT_LE(oracle::max_rel_error(oracle::to_double(unpad(db, 1, c)), fd_b), 1e-3);
}

// -- pooling -----------------------------------------------------------------

TEST(PoolKernel, TwoByTwoWindow) {
  const auto x = pad({1, 2, 3, 4}, 4, 1);
  std::vector<float> y(4);
  std::vector<std::int64_t> arg(1);
  PoolDescriptor d{2, 2, 2, 2, 0, 0, 0};
  kernels::maxpool2d_forward(x.data(), {1, 2, 2, 1}, d, y.data(), arg.data());
  EXPECT_EQ(y[0], 4.0f);
  EXPECT_EQ(arg[0], 3);
  const auto dy = pad({1}, 1, 1);
  std::vector<float> dx(16, 7.0f);
  kernels::maxpool2d_backward(dy.data(), {1, 1, 1, 1}, arg.data(), dx.data(), {1, 2, 2, 1});
  EXPECT_EQ(unpad(dx, 4, 1), (std::vector<float>{0, 0, 0, 1}));
}

TEST(PoolKernel, AdaptiveGlobalMax) {
  Rng rng(12);
  const oracle::Dims xs{2, 8, 8, 256};
  const auto x = oracle::rounded(oracle::random_vec(rng, xs.size()));
  const auto px = pad(oracle::to_float(x), 128, 256);
  PoolDescriptor d;
  d.adaptive_target = 1;
  EXPECT_EQ(d.output_shape({2, 8, 8, 256}), (Nhwc{2, 1, 1, 256}));
  std::vector<float> y(2 * 256);
  std::vector<std::int64_t> arg(2 * 256);
  kernels::maxpool2d_forward(px.data(), {2, 8, 8, 256}, d, y.data(), arg.data());
  const auto ref = oracle::maxpool(x, xs, {0, 0, 0, 1});
  EXPECT_EQ(oracle::to_double(y), ref);
}

TEST(PoolKernel, TiesPickFirstIndex) {
  const auto x = pad(std::vector<float>(16, 2.0f), 16, 1);
  std::vector<float> y(4 * 4);
  std::vector<std::int64_t> arg(4);
  kernels::maxpool2d_forward(x.data(), {1, 4, 4, 1}, {2, 2, 2, 2, 0, 0, 0}, y.data(), arg.data());
  EXPECT_EQ(arg, (std::vector<std::int64_t>{0, 2, 8, 10}));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(y[static_cast<std::size_t>(i * 4)], 2.0f);
}

TEST(PoolKernel, OverlappingWindowsSumAndZeroGradient) {
  // 1x3 input, window 2 stride 1: the middle max is hit by both windows
  const auto x = pad({0, 5, 1}, 3, 1);
  std::vector<float> y(2 * 4);
  std::vector<std::int64_t> arg(2);
  kernels::maxpool2d_forward(x.data(), {1, 1, 3, 1}, {1, 2, 1, 1, 0, 0, 0}, y.data(), arg.data());
  EXPECT_EQ(arg, (std::vector<std::int64_t>{1, 1}));
  const auto dy = pad({2, 3}, 2, 1);
  std::vector<float> dx(3 * 4);
  kernels::maxpool2d_backward(dy.data(), {1, 1, 2, 1}, arg.data(), dx.data(), {1, 1, 3, 1});
  EXPECT_EQ(unpad(dx, 3, 1), (std::vector<float>{0, 5, 0}));
  const auto z = pad({0, 0}, 2, 1);
  kernels::maxpool2d_backward(z.data(), {1, 1, 2, 1}, arg.data(), dx.data(), {1, 1, 3, 1});
  for (float v : dx) EXPECT_EQ(v, 0.0f);
}

TEST(PoolKernel, AdaptivePartitionUsesFloorCeilWindows) {
  Rng rng(13);
  const oracle::Dims xs{1, 5, 7, 2};
  const auto x = oracle::rounded(oracle::random_vec(rng, xs.size()));
  PoolDescriptor d;
  d.adaptive_target = 3;
  std::vector<float> y(9 * 4);
  std::vector<std::int64_t> arg(9 * 2);
  kernels::maxpool2d_forward(pad(oracle::to_float(x), 35, 2).data(), {1, 5, 7, 2}, d, y.data(), arg.data());
  std::vector<std::int64_t> ref_arg;
  EXPECT_EQ(oracle::to_double(unpad(y, 9, 2)), oracle::maxpool(x, xs, {0, 0, 0, 3}, &ref_arg));
  EXPECT_EQ(arg, ref_arg);
}

TEST_F(CpuBackendTest, StaleArgmaxIsShapeError) {
  DeviceBuffer dy = put(pad({1}, 1, 1)), dx = be.alloc(4 * 4 * 4), arg = be.alloc(8);
  const std::int64_t idx = 99;
  be.write(arg, 0, std::as_bytes(std::span<const std::int64_t>(&idx, 1)));
  EXPECT_EQ(kind_of([&] { be.maxpool2d_backward(dy, {1, 1, 1, 1}, arg, dx, {1, 2, 2, 1}); }), ErrorKind::shape);
  be.free(dy);
  be.free(dx);
  be.free(arg);
}

// -- element-wise ------------------------------------------------------------

TEST(UnaryKernel, Pix2FloatIsExactForEveryByte) {
  std::vector<std::uint8_t> bytes(256);
  for (int i = 0; i < 256; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
  std::vector<float> y(256);
  kernels::elementwise_unary({UnaryCode::pix2float, 1.0f}, bytes.data(), nullptr, {1, 256}, y.data());
  for (int i = 0; i < 256; ++i) {
    EXPECT_EQ(y[static_cast<std::size_t>(i)], static_cast<float>(static_cast<double>(i) / 255.0)) << i;
  }
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_EQ(y[255], 1.0f);
}

TEST(UnaryKernel, ActivationScalars) {
  const auto x = pad({-2, 3}, 1, 2);
  std::vector<float> y(4);
  kernels::elementwise_unary({UnaryCode::leaky_relu_fwd, 0.01f}, x.data(), nullptr, {1, 2}, y.data());
  EXPECT_FLOAT_EQ(y[0], -0.02f);
  EXPECT_FLOAT_EQ(y[1], 3.0f);
  const auto z = pad({0}, 1, 1);
  kernels::elementwise_unary({UnaryCode::sigmoid_fwd, 1.0f}, z.data(), nullptr, {1, 1}, y.data());
  EXPECT_EQ(y[0], 0.5f);
  const auto dy = pad({1}, 1, 1), out = pad({0.5f}, 1, 1);
  kernels::elementwise_unary({UnaryCode::sigmoid_bwd, 1.0f}, dy.data(), out.data(), {1, 1}, y.data());
  EXPECT_EQ(y[0], 0.25f);
  const auto g = pad({1, 1}, 1, 2), fwd = pad({-0.02f, 3}, 1, 2);
  kernels::elementwise_unary({UnaryCode::leaky_relu_bwd, 0.01f}, g.data(), fwd.data(), {1, 2}, y.data());
  EXPECT_FLOAT_EQ(y[0], 0.01f);
  EXPECT_FLOAT_EQ(y[1], 1.0f);
}

TEST_F(CpuBackendTest, BackwardActivationWithoutAuxIsArgumentError) {
  DeviceBuffer x = put(pad({1}, 1, 1)), y = be.alloc(16);
  EXPECT_EQ(kind_of([&] { be.elementwise_unary({UnaryCode::sigmoid_bwd, 1.0f}, x, nullptr, {1, 1}, y); }),
            ErrorKind::argument);
  be.free(x);
  be.free(y);
}

TEST(BinaryKernel, AddAndMulIdentities) {
  Rng rng(14);
  const auto x = pad(oracle::to_float(oracle::random_vec(rng, 6)), 2, 3);
  const auto zeros = pad(std::vector<float>(6, 0.0f), 2, 3), ones = pad(std::vector<float>(6, 1.0f), 2, 3);
  std::vector<float> y(8);
  kernels::elementwise_binary(BinaryCode::add, x.data(), zeros.data(), {2, 3}, y.data());
  EXPECT_EQ(y, x);
  kernels::elementwise_binary(BinaryCode::mul, x.data(), ones.data(), {2, 3}, y.data());
  EXPECT_EQ(y, x);
  const auto a = pad({1, 2}, 1, 2), b = pad({3, 4}, 1, 2);
  kernels::elementwise_binary(BinaryCode::add, a.data(), b.data(), {1, 2}, y.data());
  EXPECT_EQ(unpad(y, 1, 2), (std::vector<float>{4, 6}));
}

TEST(ReduceKernel, FieldSum) {
  const auto x = pad({1, 2, 3, 4}, 2, 2);
  std::vector<float> out(4, 9.0f);
  kernels::reduce_field_sum(x.data(), {2, 2}, out.data());
  EXPECT_EQ(unpad(out, 1, 2), (std::vector<float>{4, 6}));
  kernels::reduce_field_sum(x.data(), {1, 2}, out.data());
  EXPECT_EQ(unpad(out, 1, 2), (std::vector<float>{1, 2}));
  const auto z = pad(std::vector<float>(6, 0.0f), 3, 2);
  kernels::reduce_field_sum(z.data(), {3, 2}, out.data());
  for (float v : out) EXPECT_EQ(v, 0.0f);
}

// -- loss, optimizers, init --------------------------------------------------

TEST(SoftmaxKernel, UniformLogitsGiveLnTen) {
  const auto z = pad(std::vector<float>(30, 0.25f), 3, 10);
  const auto y = pad(oracle::to_float(oracle::onehot({1, 4, 9}, 10)), 3, 10);
  std::vector<float> loss(4), g(z.size());
  ASSERT_TRUE(kernels::softmax_crossentropy(z.data(), y.data(), {3, 10}, true, loss.data(), g.data()));
  EXPECT_NEAR(loss[0], std::log(10.0), 1e-6);
  for (int r = 0; r < 3; ++r) {
    double s = 0.0;
    for (int c = 0; c < 10; ++c) s += g[static_cast<std::size_t>(r * 12 + c)];
    EXPECT_NEAR(s, 0.0, 1e-6);
  }
}

TEST(SoftmaxKernel, HugeHotLogitIsStable) {
  std::vector<float> zl(10, 0.0f);
  zl[0] = 1000.0f;
  const auto z = pad(zl, 1, 10), y = pad(oracle::to_float(oracle::onehot({0}, 10)), 1, 10);
  std::vector<float> loss(4), g(12);
  ASSERT_TRUE(kernels::softmax_crossentropy(z.data(), y.data(), {1, 10}, true, loss.data(), g.data()));
  EXPECT_TRUE(std::isfinite(loss[0]));
  EXPECT_NEAR(loss[0], 0.0f, 1e-6);
}

TEST(SoftmaxKernel, MalformedLabelsRejected) {
  const auto z = pad(std::vector<float>(10, 0.0f), 1, 10);
  std::vector<float> yl(10, 0.0f);
  yl[1] = yl[2] = 1.0f;
  const auto y = pad(yl, 1, 10);
  std::vector<float> loss(4), g(12);
  EXPECT_FALSE(kernels::softmax_crossentropy(z.data(), y.data(), {1, 10}, true, loss.data(), g.data()));
}

TEST(SoftmaxKernel, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  const std::int64_t rows = 4, c = 7;
  const auto z = oracle::rounded(oracle::random_vec(rng, rows * c, -3, 3));
  const auto y = oracle::onehot({0, 3, 6, 2}, c);
  const auto fd = oracle::numeric_grad([&](const oracle::Vec& v) { return oracle::softmax_ce(v, y, rows, c); }, z);
  std::vector<float> loss(4), g(static_cast<std::size_t>(rows * 8));
  kernels::softmax_crossentropy(pad(oracle::to_float(z), rows, c).data(), pad(oracle::to_float(y), rows, c).data(),
                                {rows, c}, true, loss.data(), g.data());
  EXPECT_NEAR(loss[0], oracle::softmax_ce(z, y, rows, c), 1e-5);
  EXPECT_LE(oracle::max_rel_error(oracle::to_double(unpad(g, rows, c)), fd), 1e-3);
}

TEST(AdamKernel, ScalarRecurrence) {
  const AdamHyper h{0.01f, 0.9f, 0.999f, 1e-8f};
  float p = 0.0f, g = 0.0f, m = 0.0f, v = 0.0f;
  kernels::adam_step(&p, &g, &m, &v, 1, 1, h);
  EXPECT_EQ(p, 0.0f);
  g = 1.0f;
  kernels::adam_step(&p, &g, &m, &v, 1, 1, h);
  EXPECT_NEAR(p, -0.01f, 1e-6);
  // second step against the double recurrence
  double pd = -0.01 * (1.0 / (1.0 + 1e-8)), md = 0.1, vd = 0.001;
  md = 0.9 * md + 0.1;
  vd = 0.999 * vd + 0.001;
  pd -= 0.01 * (md / (1 - 0.81)) / (std::sqrt(vd / (1 - 0.999 * 0.999)) + 1e-8);
  kernels::adam_step(&p, &g, &m, &v, 1, 2, h);
  EXPECT_NEAR(p, pd, 1e-6);
}

TEST(SgdKernel, Formula) {
  float p[3] = {1.0f, 1.0f, 1.0f};
  const float g[3] = {2.0f, 0.0f, -1.0f};
  kernels::sgd_step(p, g, 3, 0.01f);
  EXPECT_FLOAT_EQ(p[0], 0.98f);
  EXPECT_EQ(p[1], 1.0f);
  float q = 5.0f;
  const float gq = 0.5f;
  for (int i = 0; i < 10; ++i) kernels::sgd_step(&q, &gq, 1, 0.1f);
  EXPECT_NEAR(q, 5.0 - 10 * 0.1 * 0.5, 1e-5);
}

TEST(UniformKernel, RangeDeterminismAndMean) {
  std::vector<float> z(8, 3.0f);
  kernels::uniform_fill(z.data(), {2, 3}, 0.0f, 0.0f, 1);
  for (float v : z) EXPECT_EQ(v, 0.0f);
  const std::int64_t n = 100000;
  std::vector<float> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
  kernels::uniform_fill(a.data(), {n / 4, 4}, -1.0f, 1.0f, 77);
  kernels::uniform_fill(b.data(), {n / 4, 4}, -1.0f, 1.0f, 77);
  EXPECT_EQ(a, b);
  double mean = 0.0;
  for (float v : a) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LT(v, 1.0f);
    mean += v;
  }
  EXPECT_LE(std::abs(mean / static_cast<double>(n)), 0.02);
  std::vector<float> padded(8, 1.0f);
  kernels::uniform_fill(padded.data(), {2, 3}, -1.0f, 1.0f, 5);
  EXPECT_TRUE(pad_lanes_zero(padded, 2, 3));
}

TEST_F(CpuBackendTest, UniformFillRejectsInvertedRange) {
  DeviceBuffer b = be.alloc(16);
  EXPECT_EQ(kind_of([&] { be.uniform_fill(b, {1, 4}, 1.0f, -1.0f, 0); }), ErrorKind::argument);
  be.free(b);
}

TEST_F(CpuBackendTest, AdamLengthMismatchIsShapeError) {
  DeviceBuffer p = be.alloc(32), g = be.alloc(32), m = be.alloc(32), v = be.alloc(16);
  EXPECT_EQ(kind_of([&] { be.adam_step(p, g, m, v, 8, 1, {}); }), ErrorKind::shape);
  EXPECT_EQ(kind_of([&] { be.sgd_step(p, v, 8, 0.1f); }), ErrorKind::shape);
  for (auto b : {p, g, m, v}) be.free(b);
}
