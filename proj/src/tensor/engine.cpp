#include "tensorforge/tensor/engine.hpp"

#include <algorithm>
#include <cstring>

#include "tensorforge/backend/cpu_backend.hpp"
#include "tensorforge/backend/kernels.hpp"
#include "tensorforge/core/validate.hpp"
#include "tensorforge/error.hpp"

namespace tensorforge {

namespace v = core::validate;
using backend::CompletionEvent;
using backend::ConvAlgorithm;
using backend::DeviceBuffer;
using backend::MatShape;
using backend::Nhwc;
using detail::Storage;

namespace detail {
DeviceContext::~DeviceContext() = default;
}  // namespace detail

namespace {

Storage* st(const Tensor& t, const char* op) { return &t.live_storage(op); }

Shape nhwc_shape(const Nhwc& s) { return {std::max<std::int64_t>(s.n, 0), std::max<std::int64_t>(s.h, 0),
                                          std::max<std::int64_t>(s.w, 0), std::max<std::int64_t>(s.c, 0)}; }

Nhwc as_nhwc(const Shape& s) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  if (s.size() == 2) return {s[0], 1, 1, s[1]};
  fail(ErrorKind::shape, "expected an NHWC or [N,C] shape, got " + to_string(s));
}

bool layouts_coincide(const Shape& a, const Shape& b) {
  if (a.empty() || b.empty()) return false;
  if (a.back() == b.back()) return true;
  return a.back() % 4 == 0 && b.back() % 4 == 0;
}

}  // namespace

Engine::Engine(std::unique_ptr<backend::Backend> be, EngineOptions options) : conv_threshold_(options.conv_threshold) {
  if (!be) be = std::make_unique<backend::CpuBackend>();
  require(options.conv_threshold >= 0, ErrorKind::argument, "conv threshold must be non-negative");
  device_ = std::make_shared<detail::DeviceContext>();
  device_->backend = std::move(be);
  device_->pool = std::make_unique<core::MemoryPool>(*device_->backend, options.zero_on_acquire);
  device_->staging = std::make_unique<core::StagingCache>(*device_->backend, options.staging_bytes);
  device_->backend->set_conv_threshold(conv_threshold_);
  default_stream_ = device_->backend->create_stream();
  current_stream_ = default_stream_;
  streams_.push_back(default_stream_);
}

Engine::~Engine() {
  try {
    synchronize();
  } catch (...) {
  }
  for (auto s : streams_) device_->backend->destroy_stream(s);
}

Engine& Engine::sync(bool on) noexcept {
  flags_.sync = on;
  return *this;
}

Engine& Engine::check(bool on) noexcept {
  flags_.check = on;
  return *this;
}

Engine& Engine::set_flags(bool sync_on, bool check_on) noexcept { return sync(sync_on).check(check_on); }

Engine& Engine::set_conv_threshold(std::int64_t threshold) {
  require(threshold >= 0, ErrorKind::argument, "conv threshold must be non-negative");
  conv_threshold_ = threshold;
  backend().set_conv_threshold(threshold);
  return *this;
}

Engine& Engine::set_in_place(bool on) noexcept {
  in_place_ = on;
  return *this;
}

Engine& Engine::set_eager_release(bool on) noexcept {
  eager_release_ = on;
  return *this;
}

backend::StreamId Engine::create_stream() {
  const auto s = backend().create_stream();
  streams_.push_back(s);
  return s;
}

void Engine::use_stream(backend::StreamId stream) {
  require(std::find(streams_.begin(), streams_.end(), stream) != streams_.end(), ErrorKind::invalid_stream,
          "stream " + std::to_string(stream) + " does not belong to this engine");
  current_stream_ = stream;
}

void Engine::synchronize() {
  for (auto s : streams_) backend().synchronize(s);
}

void Engine::launch(const std::vector<Storage*>& reads, const std::vector<Storage*>& writes, backend::Task kernel) {
  if (flags_.sync) {
    for (auto* r : reads) r->last_write.wait();
    for (auto* w : writes) {
      for (auto& e : w->hazards()) e.wait();
    }
    kernel();
    return;
  }
  std::vector<CompletionEvent> deps;
  for (auto* r : reads) {
    if (r->last_write.state() != backend::EventState::done) deps.push_back(r->last_write);
  }
  for (auto* w : writes) {
    auto h = w->hazards();
    deps.insert(deps.end(), h.begin(), h.end());
  }
  CompletionEvent ev = backend().enqueue(current_stream_, [deps = std::move(deps), k = std::move(kernel)] {
    // a failed input poisons this operation with the original error
    for (const auto& d : deps) d.wait();
    k();
  });
  for (auto* r : reads) r->add_reader(ev);
  for (auto* w : writes) {
    w->last_write = ev;
    w->readers.clear();
  }
}

std::shared_ptr<Storage> Engine::make_storage(std::size_t bytes) {
  return std::make_shared<Storage>(device_, pool().acquire(bytes));
}

Tensor Engine::make(const Shape& shape, DType dtype) {
  require(!shape.empty() && shape.size() <= 4, ErrorKind::shape, "tensor rank must be 1..4, got " + to_string(shape));
  for (auto e : shape) require(e >= 0, ErrorKind::shape, "negative extent in " + to_string(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->engine = this;
  impl->shape = shape;
  impl->dtype = dtype;
  const MatShape m{element_count(shape) / std::max<std::int64_t>(shape.back(), 1), shape.back()};
  const std::int64_t phys = shape.back() == 0 ? 0 : m.physical_elements();
  impl->storage = make_storage(static_cast<std::size_t>(phys) * element_bytes(dtype));
  return Tensor(std::move(impl));
}

Tensor Engine::empty(const Shape& shape, DType dtype) { return make(shape, dtype); }

// New tensor taking over `source`'s storage; `source` becomes unreadable.
Tensor Engine::adopt(const Tensor& source, const Shape& shape) {
  auto* src = source.impl();
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->engine = this;
  impl->shape = shape;
  impl->dtype = src->dtype;
  impl->storage = src->storage;
  src->storage.reset();
  src->overwritten = true;
  return Tensor(std::move(impl));
}

void Engine::upload(const Tensor& t, std::span<const std::byte> physical) {
  Storage& s = t.live_storage("upload");
  if (flags_.sync) {
    staging().upload(physical, s.buffer, default_stream_).wait();
    return;
  }
  s.last_write = staging().upload(physical, s.buffer, current_stream_);
}

Tensor Engine::from_host(std::span<const float> values, const Shape& shape) {
  Tensor t = make(shape);
  require(static_cast<std::int64_t>(values.size()) == t.numel(), ErrorKind::shape,
          "from_host: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  const MatShape m = t.matrix();
  std::vector<float> phys(static_cast<std::size_t>(t.physical_elements()), 0.0f);
  for (std::int64_t r = 0; r < m.rows; ++r) {
    std::memcpy(phys.data() + r * m.ld(), values.data() + r * m.cols, static_cast<std::size_t>(m.cols) * sizeof(float));
  }
  upload(t, std::as_bytes(std::span<const float>(phys)));
  return t;
}

void Engine::assign(const Tensor& t, std::span<const float> values) {
  require(t.dtype() == DType::float32, ErrorKind::argument, "assign: tensor is not float32");
  require(static_cast<std::int64_t>(values.size()) == t.numel(), ErrorKind::shape,
          "assign: " + std::to_string(values.size()) + " values for shape " + to_string(t.shape()));
  Storage& s = t.live_storage("assign");
  for (const auto& e : s.hazards()) e.wait();
  s.readers.clear();
  const MatShape m = t.matrix();
  std::vector<float> phys(static_cast<std::size_t>(t.physical_elements()), 0.0f);
  for (std::int64_t r = 0; r < m.rows; ++r) {
    std::memcpy(phys.data() + r * m.ld(), values.data() + r * m.cols, static_cast<std::size_t>(m.cols) * sizeof(float));
  }
  upload(t, std::as_bytes(std::span<const float>(phys)));
}

Tensor Engine::from_host_bytes(std::span<const std::uint8_t> values, const Shape& shape) {
  Tensor t = make(shape, DType::int8);
  require(static_cast<std::int64_t>(values.size()) == t.numel(), ErrorKind::shape,
          "from_host_bytes: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  const MatShape m = t.matrix();
  std::vector<std::uint8_t> phys(t.physical_bytes(), 0);
  for (std::int64_t r = 0; r < m.rows; ++r) {
    std::memcpy(phys.data() + r * m.ld(), values.data() + r * m.cols, static_cast<std::size_t>(m.cols));
  }
  upload(t, std::as_bytes(std::span<const std::uint8_t>(phys)));
  return t;
}

Tensor Engine::full(const Shape& shape, float value) {
  Tensor t = make(shape);
  fill(t, value);
  return t;
}

Tensor Engine::uniform(const Shape& shape, float low, float high, std::uint64_t seed) {
  Tensor t = make(shape);
  uniform_fill(t, low, high, seed);
  return t;
}

void Engine::uniform_fill(const Tensor& t, float low, float high, std::uint64_t seed) {
  if (flags_.check) require(low <= high, ErrorKind::argument, "uniform_fill: argument 'low' must not exceed 'high'");
  auto* be = &backend();
  const MatShape m = t.matrix();
  Storage* s = st(t, "uniform_fill");
  launch({}, {s}, [be, b = s->buffer, m, low, high, seed] { be->uniform_fill(b, m, low, high, seed); });
}

Tensor Engine::copy(const Tensor& t) {
  Tensor y = make(t.shape(), t.dtype());
  auto* be = &backend();
  Storage* src = st(t, "copy");
  Storage* dst = st(y, "copy");
  const std::size_t bytes = t.physical_bytes();
  launch({src}, {dst}, [be, a = src->buffer, b = dst->buffer, bytes] { be->copy_buffer(a, b, bytes); });
  return y;
}

Tensor Engine::to_float(const Tensor& t) {
  require(t.dtype() == DType::int8, ErrorKind::argument, "to_float: argument 't' must be int8");
  Tensor y = make(t.shape());
  if (t.numel() == 0) return y;
  auto* be = &backend();
  const MatShape m = t.matrix();
  Storage* x = st(t, "to_float");
  Storage* o = st(y, "to_float");
  launch({x}, {o}, [be, a = x->buffer, b = o->buffer, m] {
    be->elementwise_unary({backend::UnaryCode::pix2float, 1.0f}, a, nullptr, m, b);
  });
  return y;
}

Tensor Engine::reshape(const Tensor& t, const Shape& shape) {
  require(element_count(shape) == t.numel() && !shape.empty(), ErrorKind::shape,
          "reshape: argument 'shape' " + to_string(shape) + " must hold " + std::to_string(t.numel()) +
              " elements of " + to_string(t.shape()));
  if (shape == t.shape()) return t;
  Storage* src = st(t, "reshape");
  if (layouts_coincide(t.shape(), shape)) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->engine = this;
    impl->shape = shape;
    impl->dtype = t.dtype();
    impl->storage = t.impl()->storage;
    return Tensor(std::move(impl));
  }
  Tensor y = make(shape, t.dtype());
  Storage* dst = st(y, "reshape");
  auto* be = &backend();
  const MatShape from = t.matrix();
  const MatShape to = y.matrix();
  const std::size_t eb = element_bytes(t.dtype());
  launch({src}, {dst}, [be, a = src->buffer, b = dst->buffer, from, to, eb] {
    std::vector<std::byte> in(static_cast<std::size_t>(from.physical_elements()) * eb);
    std::vector<std::byte> out(static_cast<std::size_t>(to.physical_elements()) * eb, std::byte{0});
    be->read(a, 0, in);
    const std::int64_t total = from.rows * from.cols;
    for (std::int64_t i = 0; i < total; ++i) {
      const std::int64_t si = (i / from.cols) * from.ld() + i % from.cols;
      const std::int64_t di = (i / to.cols) * to.ld() + i % to.cols;
      std::memcpy(out.data() + di * eb, in.data() + si * eb, eb);
    }
    be->write(b, 0, out);
  });
  return y;
}

Tensor Engine::matmul(const Tensor& a, const Tensor& b, bool ta, bool tb, const Tensor* bias) {
  const MatShape as = a.matrix(), bs = b.matrix();
  const std::int64_t m = ta ? as.cols : as.rows;
  const std::int64_t n = tb ? bs.rows : bs.cols;
  if (flags_.check) {
    v::rank("matmul", "a", a.shape(), 2, 2);
    v::rank("matmul", "b", b.shape(), 2, 2);
    v::gemm("matmul", as, ta, bs, tb);
    if (bias) v::same_shape("matmul", "out_features", {n}, "bias", bias->shape());
  }
  Tensor y = make({m, n});
  Storage* sa = st(a, "matmul");
  Storage* sb = st(b, "matmul");
  Storage* sy = st(y, "matmul");
  std::vector<Storage*> reads{sa, sb};
  DeviceBuffer bb;
  if (bias) {
    reads.push_back(st(*bias, "matmul"));
    bb = reads.back()->buffer;
  }
  auto* be = &backend();
  const bool has_bias = bias != nullptr;
  launch(reads, {sy}, [be, A = sa->buffer, B = sb->buffer, as, bs, ta, tb, has_bias, bb, C = sy->buffer] {
    be->gemm(A, as, ta, B, bs, tb, has_bias ? &bb : nullptr, C);
  });
  return y;
}

Tensor Engine::conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const backend::ConvDescriptor& desc) {
  if (flags_.check) {
    v::rank("conv2d", "x", x.shape(), 4, 4);
    v::conv2d("conv2d", x.nhwc(), desc);
    v::conv2d_filter("conv2d", w.shape(), desc);
    if (bias) v::same_shape("conv2d", "out_channels", {desc.out_channels}, "bias", bias->shape());
  }
  const Nhwc xs = as_nhwc(x.shape());
  const Nhwc ys = desc.output_shape(xs);
  Tensor y = make(nhwc_shape(ys));
  ConvAlgorithm algo = desc.algorithm;
  if (algo == ConvAlgorithm::automatic) algo = backend::kernels::resolve_conv_algorithm(desc, ys, conv_threshold_);
  Storage* sx = st(x, "conv2d");
  Storage* sw = st(w, "conv2d");
  Storage* sy = st(y, "conv2d");
  std::vector<Storage*> reads{sx, sw};
  DeviceBuffer bb;
  if (bias) {
    reads.push_back(st(*bias, "conv2d"));
    bb = reads.back()->buffer;
  }
  auto* be = &backend();
  const bool has_bias = bias != nullptr;
  launch(reads, {sy}, [be, X = sx->buffer, xs, W = sw->buffer, desc, has_bias, bb, Y = sy->buffer, algo] {
    be->conv2d_forward(X, xs, W, desc, has_bias ? &bb : nullptr, Y, algo);
  });
  return y;
}

Tensor Engine::conv2d_backward_data(const Tensor& dy, const Tensor& w, const backend::ConvDescriptor& desc,
                                    const Shape& x_shape) {
  const Nhwc xs = as_nhwc(x_shape);
  if (flags_.check) {
    v::rank("conv2d_backward_data", "x_shape", x_shape, 4, 4);
    v::conv2d("conv2d_backward_data", xs, desc);
    v::conv2d_filter("conv2d_backward_data", w.shape(), desc);
    v::rank("conv2d_backward_data", "dy", dy.shape(), 4, 4);
    v::conv2d_output("conv2d_backward_data", "dy", xs, dy.nhwc(), desc);
  }
  const Nhwc dys = as_nhwc(dy.shape());
  Tensor dx = make(x_shape);
  ConvAlgorithm algo = desc.algorithm;
  if (algo == ConvAlgorithm::automatic) algo = backend::kernels::resolve_conv_algorithm(desc, dys, conv_threshold_);
  Storage* sdy = st(dy, "conv2d_backward_data");
  Storage* sw = st(w, "conv2d_backward_data");
  Storage* sdx = st(dx, "conv2d_backward_data");
  auto* be = &backend();
  launch({sdy, sw}, {sdx}, [be, DY = sdy->buffer, dys, W = sw->buffer, desc, DX = sdx->buffer, xs, algo] {
    be->conv2d_backward_data(DY, dys, W, desc, DX, xs, algo);
  });
  return dx;
}

Tensor Engine::conv2d_backward_filter(const Tensor& x, const Tensor& dy, const backend::ConvDescriptor& desc) {
  if (flags_.check) {
    v::rank("conv2d_backward_filter", "x", x.shape(), 4, 4);
    v::conv2d("conv2d_backward_filter", x.nhwc(), desc);
    v::rank("conv2d_backward_filter", "dy", dy.shape(), 4, 4);
    v::conv2d_output("conv2d_backward_filter", "dy", x.nhwc(), dy.nhwc(), desc);
  }
  const Nhwc xs = as_nhwc(x.shape());
  const Nhwc dys = as_nhwc(dy.shape());
  Tensor dw = make({std::max<std::int64_t>(desc.out_channels, 0), std::max<std::int64_t>(desc.kernel_h, 0),
                    std::max<std::int64_t>(desc.kernel_w, 0), std::max<std::int64_t>(desc.in_channels, 0)});
  ConvAlgorithm algo = desc.algorithm;
  if (algo == ConvAlgorithm::automatic) algo = backend::kernels::resolve_conv_algorithm(desc, dys, conv_threshold_);
  Storage* sx = st(x, "conv2d_backward_filter");
  Storage* sdy = st(dy, "conv2d_backward_filter");
  Storage* sdw = st(dw, "conv2d_backward_filter");
  auto* be = &backend();
  launch({sx, sdy}, {sdw}, [be, X = sx->buffer, xs, DY = sdy->buffer, dys, desc, DW = sdw->buffer, algo] {
    be->conv2d_backward_filter(X, xs, DY, dys, desc, DW, algo);
  });
  return dw;
}

namespace {

void check_channel_vector(const char* op, const char* arg, const Tensor* t, std::int64_t channels) {
  if (t) v::same_shape(op, "channels", {channels}, arg, t->shape());
}

}  // namespace

BatchNormOutputs Engine::batchnorm_train(const Tensor& x, const Tensor* gamma, const Tensor* beta,
                                         const Tensor& running_mean, const Tensor& running_var,
                                         backend::BatchNormHyper hyper, bool in_place) {
  const MatShape m = x.matrix();
  if (flags_.check) {
    const char* op = "batchnorm_forward";
    v::rank(op, "x", x.shape(), 2, 4);
    check_channel_vector(op, "gamma", gamma, m.cols);
    check_channel_vector(op, "beta", beta, m.cols);
    check_channel_vector(op, "running_mean", &running_mean, m.cols);
    check_channel_vector(op, "running_var", &running_var, m.cols);
    require(hyper.eps > 0.0f, ErrorKind::argument, "batchnorm_forward: argument 'eps' must be positive");
  }
  Storage* sx = st(x, "batchnorm_forward");
  std::vector<Storage*> reads{sx};
  DeviceBuffer g, b;
  if (gamma) reads.push_back(st(*gamma, "batchnorm_forward")), g = reads.back()->buffer;
  if (beta) reads.push_back(st(*beta, "batchnorm_forward")), b = reads.back()->buffer;
  Storage* rm = st(running_mean, "batchnorm_forward");
  Storage* rv = st(running_var, "batchnorm_forward");
  BatchNormOutputs out;
  out.y = in_place ? adopt(x, x.shape()) : make(x.shape());
  out.saved_mean = make({m.cols});
  out.saved_inv_std = make({m.cols});
  Storage* sy = st(out.y, "batchnorm_forward");
  Storage* sm = st(out.saved_mean, "batchnorm_forward");
  Storage* si = st(out.saved_inv_std, "batchnorm_forward");
  auto* be = &backend();
  const bool hg = gamma != nullptr, hb = beta != nullptr;
  launch(reads, {rm, rv, sy, sm, si},
         [be, X = sx->buffer, m, hg, g, hb, b, RM = rm->buffer, RV = rv->buffer, hyper, Y = sy->buffer,
          SM = sm->buffer, SI = si->buffer] {
           be->batchnorm_forward(X, m, hg ? &g : nullptr, hb ? &b : nullptr, RM, RV, true, hyper, Y, &SM, &SI);
         });
  return out;
}

Tensor Engine::batchnorm_infer(const Tensor& x, const Tensor* gamma, const Tensor* beta, const Tensor& running_mean,
                               const Tensor& running_var, float eps) {
  const MatShape m = x.matrix();
  if (flags_.check) {
    const char* op = "batchnorm_forward";
    v::rank(op, "x", x.shape(), 2, 4);
    check_channel_vector(op, "gamma", gamma, m.cols);
    check_channel_vector(op, "beta", beta, m.cols);
    check_channel_vector(op, "running_mean", &running_mean, m.cols);
    check_channel_vector(op, "running_var", &running_var, m.cols);
    require(eps > 0.0f, ErrorKind::argument, "batchnorm_forward: argument 'eps' must be positive");
  }
  Storage* sx = st(x, "batchnorm_forward");
  Storage* rm = st(running_mean, "batchnorm_forward");
  Storage* rv = st(running_var, "batchnorm_forward");
  std::vector<Storage*> reads{sx, rm, rv};
  DeviceBuffer g, b;
  if (gamma) reads.push_back(st(*gamma, "batchnorm_forward")), g = reads.back()->buffer;
  if (beta) reads.push_back(st(*beta, "batchnorm_forward")), b = reads.back()->buffer;
  Tensor y = make(x.shape());
  Storage* sy = st(y, "batchnorm_forward");
  auto* be = &backend();
  const bool hg = gamma != nullptr, hb = beta != nullptr;
  launch(reads, {sy}, [be, X = sx->buffer, m, hg, g, hb, b, RM = rm->buffer, RV = rv->buffer, eps, Y = sy->buffer] {
    be->batchnorm_forward(X, m, hg ? &g : nullptr, hb ? &b : nullptr, RM, RV, false, {eps, 0.0f}, Y, nullptr,
                          nullptr);
  });
  return y;
}

BatchNormGrads Engine::batchnorm_backward(const Tensor& dy, const Tensor& x, bool x_is_normalized, const Tensor* gamma,
                                          const Tensor& saved_mean, const Tensor& saved_inv_std, bool param_grads,
                                          bool in_place) {
  const MatShape m = x.matrix();
  if (flags_.check) {
    const char* op = "batchnorm_backward";
    v::same_shape(op, "x", x.shape(), "dy", dy.shape());
    check_channel_vector(op, "gamma", gamma, m.cols);
    check_channel_vector(op, "saved_mean", &saved_mean, m.cols);
    check_channel_vector(op, "saved_inv_std", &saved_inv_std, m.cols);
  }
  Storage* sdy = st(dy, "batchnorm_backward");
  Storage* sx = st(x, "batchnorm_backward");
  Storage* sm = st(saved_mean, "batchnorm_backward");
  Storage* si = st(saved_inv_std, "batchnorm_backward");
  std::vector<Storage*> reads{sdy, sx, sm, si};
  DeviceBuffer g;
  if (gamma) reads.push_back(st(*gamma, "batchnorm_backward")), g = reads.back()->buffer;
  BatchNormGrads out;
  out.dx = in_place ? adopt(dy, dy.shape()) : make(dy.shape());
  std::vector<Storage*> writes{st(out.dx, "batchnorm_backward")};
  DeviceBuffer dg, db;
  if (param_grads) {
    out.dgamma = make({m.cols});
    out.dbeta = make({m.cols});
    writes.push_back(st(out.dgamma, "batchnorm_backward"));
    dg = writes.back()->buffer;
    writes.push_back(st(out.dbeta, "batchnorm_backward"));
    db = writes.back()->buffer;
  }
  auto* be = &backend();
  const bool hg = gamma != nullptr;
  launch(reads, writes,
         [be, DY = sdy->buffer, X = sx->buffer, x_is_normalized, m, hg, g, SM = sm->buffer, SI = si->buffer,
          DX = writes[0]->buffer, param_grads, dg, db] {
           be->batchnorm_backward(DY, X, x_is_normalized, m, hg ? &g : nullptr, SM, SI, DX,
                                  param_grads ? &dg : nullptr, param_grads ? &db : nullptr);
         });
  return out;
}

PoolOutputs Engine::maxpool2d(const Tensor& x, const backend::PoolDescriptor& desc) {
  if (flags_.check) {
    v::rank("maxpool2d", "x", x.shape(), 4, 4);
    v::pool2d("maxpool2d", x.nhwc(), desc);
  }
  const Nhwc xs = as_nhwc(x.shape());
  const Nhwc ys = desc.output_shape(xs);
  PoolOutputs out;
  out.y = make(nhwc_shape(ys));
  const std::int64_t outputs = std::max<std::int64_t>(ys.positions(), 0) * std::max<std::int64_t>(ys.c, 0);
  out.argmax = make_storage(static_cast<std::size_t>(outputs) * sizeof(std::int64_t));
  Storage* sx = st(x, "maxpool2d");
  Storage* sy = st(out.y, "maxpool2d");
  auto* be = &backend();
  launch({sx}, {sy, out.argmax.get()}, [be, X = sx->buffer, xs, desc, Y = sy->buffer, A = out.argmax->buffer] {
    be->maxpool2d_forward(X, xs, desc, Y, A);
  });
  return out;
}

Tensor Engine::maxpool2d_backward(const Tensor& dy, const std::shared_ptr<Storage>& argmax, const Shape& x_shape) {
  if (flags_.check) {
    const char* op = "maxpool2d_backward";
    v::rank(op, "dy", dy.shape(), 4, 4);
    v::rank(op, "x_shape", x_shape, 4, 4);
    v::equal_extent(op, "dy", "batch extent", x_shape[0], dy.dim(0));
    v::equal_extent(op, "dy", "channel extent", x_shape[3], dy.dim(3));
    require(argmax && !argmax->released, ErrorKind::invalid_handle, "maxpool2d_backward: argmax was released");
  }
  const Nhwc ys = as_nhwc(dy.shape());
  const Nhwc xs = as_nhwc(x_shape);
  Tensor dx = make(x_shape);
  Storage* sdy = st(dy, "maxpool2d_backward");
  Storage* sdx = st(dx, "maxpool2d_backward");
  auto* be = &backend();
  launch({sdy, argmax.get()}, {sdx}, [be, DY = sdy->buffer, ys, A = argmax->buffer, DX = sdx->buffer, xs] {
    be->maxpool2d_backward(DY, ys, A, DX, xs);
  });
  return dx;
}

Tensor Engine::unary(backend::UnaryOp op, const Tensor& x, const Tensor* aux, bool in_place) {
  require(op.code != backend::UnaryCode::pix2float, ErrorKind::argument, "unary: use to_float for int8 input");
  if (flags_.check) {
    require(x.dtype() == DType::float32, ErrorKind::argument, "unary: argument 'x' must be float32");
    if (op.needs_aux()) {
      require(aux != nullptr, ErrorKind::argument, "unary: backward activation needs argument 'aux' (forward output)");
      v::same_shape("unary", "x", x.shape(), "aux", aux->shape());
    }
  }
  Storage* sx = st(x, "unary");
  std::vector<Storage*> reads{sx};
  DeviceBuffer a;
  const bool has_aux = aux != nullptr;
  if (aux) reads.push_back(st(*aux, "unary")), a = reads.back()->buffer;
  Tensor y = in_place ? adopt(x, x.shape()) : make(x.shape());
  Storage* sy = st(y, "unary");
  auto* be = &backend();
  const MatShape m = y.matrix();
  launch(reads, {sy}, [be, op, X = sx->buffer, has_aux, a, m, Y = sy->buffer] {
    be->elementwise_unary(op, X, has_aux ? &a : nullptr, m, Y);
  });
  return y;
}

Tensor Engine::leaky_relu(const Tensor& x, float k, bool in_place) {
  return unary({backend::UnaryCode::leaky_relu_fwd, k}, x, nullptr, in_place);
}

Tensor Engine::leaky_relu_backward(const Tensor& dy, const Tensor& y, float k, bool in_place) {
  return unary({backend::UnaryCode::leaky_relu_bwd, k}, dy, &y, in_place);
}

Tensor Engine::sigmoid(const Tensor& x, bool in_place) {
  return unary({backend::UnaryCode::sigmoid_fwd, 1.0f}, x, nullptr, in_place);
}

Tensor Engine::sigmoid_backward(const Tensor& dy, const Tensor& y, bool in_place) {
  return unary({backend::UnaryCode::sigmoid_bwd, 1.0f}, dy, &y, in_place);
}

Tensor Engine::scale(const Tensor& x, float factor) { return unary({backend::UnaryCode::scale, factor}, x); }

Tensor Engine::binary(backend::BinaryCode code, const Tensor& a, const Tensor& b) {
  if (flags_.check) v::same_shape(code == backend::BinaryCode::add ? "add" : "mul", "x1", a.shape(), "x2", b.shape());
  Tensor y = make(a.shape());
  Storage* sa = st(a, "binary");
  Storage* sb = st(b, "binary");
  Storage* sy = st(y, "binary");
  auto* be = &backend();
  const MatShape m = a.matrix();
  launch({sa, sb}, {sy}, [be, code, A = sa->buffer, B = sb->buffer, m, Y = sy->buffer] {
    be->elementwise_binary(code, A, B, m, Y);
  });
  return y;
}

void Engine::accumulate(const Tensor& x, const Tensor& into) {
  if (flags_.check) v::same_shape("accumulate", "into", into.shape(), "x", x.shape());
  Storage* sx = st(x, "accumulate");
  Storage* sy = st(into, "accumulate");
  auto* be = &backend();
  const MatShape m = into.matrix();
  launch({sx}, {sy}, [be, X = sx->buffer, m, Y = sy->buffer] { be->accumulate(X, m, Y); });
}

void Engine::fill(const Tensor& t, float value) {
  Storage* s = st(t, "fill");
  auto* be = &backend();
  const MatShape m = t.matrix();
  launch({}, {s}, [be, Y = s->buffer, m, value] { be->fill(Y, m, value); });
}

Tensor Engine::field_sum(const Tensor& x) {
  const MatShape m = x.matrix();
  Tensor y = make({m.cols});
  Storage* sx = st(x, "field_sum");
  Storage* sy = st(y, "field_sum");
  auto* be = &backend();
  launch({sx}, {sy}, [be, X = sx->buffer, m, Y = sy->buffer] { be->reduce_field_sum(X, m, Y); });
  return y;
}

LossOutputs Engine::softmax_crossentropy(const Tensor& logits, const Tensor& onehot) {
  if (flags_.check) {
    v::rank("softmax_crossentropy", "logits", logits.shape(), 2, 2);
    v::same_shape("softmax_crossentropy", "logits", logits.shape(), "onehot", onehot.shape());
  }
  LossOutputs out;
  out.loss = make({1});
  out.dlogits = make(logits.shape());
  Storage* sz = st(logits, "softmax_crossentropy");
  Storage* sy = st(onehot, "softmax_crossentropy");
  Storage* sl = st(out.loss, "softmax_crossentropy");
  Storage* sd = st(out.dlogits, "softmax_crossentropy");
  auto* be = &backend();
  const MatShape m = logits.matrix();
  const bool validate = flags_.check;
  launch({sz, sy}, {sl, sd}, [be, Z = sz->buffer, Y = sy->buffer, m, validate, L = sl->buffer, D = sd->buffer] {
    be->softmax_crossentropy(Z, Y, m, validate, L, D);
  });
  return out;
}

void Engine::adam_step(const Tensor& param, const Tensor& grad, const Tensor& m, const Tensor& v, std::int64_t step,
                       backend::AdamHyper hyper) {
  if (flags_.check) {
    v::same_shape("adam_step", "param", param.shape(), "grad", grad.shape());
    v::same_shape("adam_step", "param", param.shape(), "m", m.shape());
    v::same_shape("adam_step", "param", param.shape(), "v", v.shape());
    require(step >= 1, ErrorKind::argument, "adam_step: argument 't' must be at least 1");
  }
  Storage* sp = st(param, "adam_step");
  Storage* sg = st(grad, "adam_step");
  Storage* sm = st(m, "adam_step");
  Storage* sv = st(v, "adam_step");
  auto* be = &backend();
  const std::int64_t count = param.physical_elements();
  launch({sg}, {sp, sm, sv}, [be, P = sp->buffer, G = sg->buffer, M = sm->buffer, V = sv->buffer, count, step, hyper] {
    be->adam_step(P, G, M, V, count, step, hyper);
  });
}

void Engine::sgd_step(const Tensor& param, const Tensor& grad, float lr) {
  if (flags_.check) v::same_shape("sgd_step", "param", param.shape(), "grad", grad.shape());
  Storage* sp = st(param, "sgd_step");
  Storage* sg = st(grad, "sgd_step");
  auto* be = &backend();
  const std::int64_t count = param.physical_elements();
  launch({sg}, {sp}, [be, P = sp->buffer, G = sg->buffer, count, lr] { be->sgd_step(P, G, count, lr); });
}

}  // namespace tensorforge
