#include "tensorforge/autograd/unit.hpp"

#include <algorithm>
#include <atomic>

#include "tensorforge/error.hpp"
#include "tensorforge/rng.hpp"

namespace tensorforge::autograd {

namespace {

std::atomic<std::uint64_t> pass_counter{0};

std::string join(const std::string& prefix, const std::string& local) {
  return prefix.empty() ? local : prefix + "." + local;
}

}  // namespace

Unit::Unit(std::string kind) : kind_(std::move(kind)) {}

Unit::~Unit() = default;

Engine& Unit::engine() const {
  require(engine_ != nullptr, ErrorKind::state, "unit '" + kind_ + "' is not initialized");
  return *engine_;
}

Unit& Unit::init(Engine& engine, const std::string& name, std::uint64_t seed) {
  bind(engine, name, seed);
  return *this;
}

void Unit::bind(Engine& engine, const std::string& name, std::uint64_t seed) {
  engine_ = &engine;
  name_ = name;
  graph_.reset();
  memo_ = {};
  params_.clear();
  buffers_.clear();
  on_init(seed);
  if (auto* m = dynamic_cast<Module*>(this)) {
    for (auto& [local, child] : m->children_) child->bind(engine, join(name, local), seed);
  }
}

std::uint64_t Unit::param_seed(std::uint64_t seed, const std::string& name) {
  return Rng(seed).split(Rng::hash(name)).seed();
}

Param& Unit::add_param(const std::string& local, const Shape& shape) {
  params_.push_back({join(name_, local), engine_->zeros(shape), engine_->zeros(shape)});
  return params_.back();
}

Tensor& Unit::add_buffer(const std::string& local, const Shape& shape, float value) {
  buffers_.push_back({join(name_, local), engine_->full(shape, value)});
  return buffers_.back().tensor;
}

std::vector<Tensor> Unit::forward(const std::vector<Tensor>& inputs) {
  require(engine_ != nullptr, ErrorKind::state, "forward on uninitialized unit '" + kind_ + "'");
  if (Graph::active() != nullptr) return run(inputs);
  auto graph = std::make_shared<Graph>(*engine_, ++pass_counter, memo_, this);
  graph_ = graph;
  Graph::Scope scope(graph.get());
  graph->begin(inputs);
  std::vector<Tensor> outputs;
  try {
    outputs = run(inputs);
  } catch (...) {
    graph->fail_pass();
    throw;
  }
  graph->finish(outputs);
  memo_ = graph->memo();
  ++passes_;
  return outputs;
}

Tensor Unit::forward(const Tensor& x) {
  auto out = forward(std::vector<Tensor>{x});
  require(out.size() == 1, ErrorKind::shape, "unit '" + kind_ + "' does not produce a single output");
  return out[0];
}

std::vector<Tensor> Unit::backward(const std::vector<Tensor>& grads) {
  require(graph_ != nullptr, ErrorKind::state, "backward on '" + kind_ + "' before any forward pass rooted here");
  return graph_->backward(grads);
}

Tensor Unit::backward(const Tensor& grad) {
  auto out = backward(std::vector<Tensor>{grad});
  return out.empty() ? Tensor{} : out[0];
}

std::size_t Unit::gc() {
  if (!graph_) return 0;
  return graph_->recycle();
}

void Unit::collect(std::vector<Param*>& out) {
  for (auto& p : params_) out.push_back(&p);
  for (auto* c : children()) c->collect(out);
}

void Unit::collect_state(std::vector<NamedTensor>& out) {
  for (auto& p : params_) out.push_back({p.name, p.value});
  for (auto& b : buffers_) out.push_back(b);
  for (auto* c : children()) c->collect_state(out);
}

std::vector<Param*> Unit::params() {
  require(engine_ != nullptr, ErrorKind::state, "params() on uninitialized unit '" + kind_ + "'");
  std::vector<Param*> out;
  collect(out);
  std::stable_sort(out.begin(), out.end(), [](const Param* a, const Param* b) { return a->name < b->name; });
  return out;
}

std::vector<NamedTensor> Unit::state() {
  require(engine_ != nullptr, ErrorKind::state, "state() on uninitialized unit '" + kind_ + "'");
  std::vector<NamedTensor> out;
  collect_state(out);
  std::stable_sort(out.begin(), out.end(), [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
  return out;
}

Unit& Unit::train(bool on) {
  training_ = on;
  for (auto* c : children()) c->train(on);
  return *this;
}

std::vector<Tensor> LeafUnit::run(const std::vector<Tensor>& inputs) {
  return Graph::active()->record(*this, nullptr, inputs);
}

std::vector<Tensor> LeafUnit::invoke(std::shared_ptr<LeafUnit> unit, const std::vector<Tensor>& x) {
  if (Graph* g = Graph::active()) return g->record(*unit, unit, x);
  Invocation ctx;
  ctx.engine = &unit->engine();
  ctx.training = false;
  ctx.in_place.assign(x.size(), false);
  for (const auto& t : x) ctx.input_shapes.push_back(t.shape());
  return unit->forward_op(ctx, x);
}

std::vector<Unit*> Module::children() {
  std::vector<Unit*> out;
  for (auto& [local, child] : children_) out.push_back(child.get());
  return out;
}

}  // namespace tensorforge::autograd
