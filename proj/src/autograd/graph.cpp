#include "tensorforge/autograd/graph.hpp"

#include <algorithm>
#include <queue>

#include "tensorforge/autograd/unit.hpp"
#include "tensorforge/error.hpp"

namespace tensorforge::autograd {

namespace {
thread_local Graph* active_graph = nullptr;
}

Graph::Graph(Engine& engine, std::uint64_t pass, PassMemo previous, const Unit* root)
    : engine_(&engine), pass_(pass), previous_(std::move(previous)), root_(root) {}

Graph* Graph::active() noexcept { return active_graph; }

Graph::Scope::Scope(Graph* g) : previous_(active_graph) { active_graph = g; }
Graph::Scope::~Scope() { active_graph = previous_; }

void Graph::begin(const std::vector<Tensor>& inputs) {
  for (const auto& x : inputs) {
    require(x.defined(), ErrorKind::invalid_handle, "forward: undefined input tensor");
  }
  root_inputs_ = inputs;
}

std::int64_t Graph::external_index(const Tensor& x) {
  auto [it, fresh] = external_ids_.emplace(x.impl(), static_cast<std::int64_t>(externals_.size()));
  if (fresh) externals_.push_back({x, {}, 0});
  return it->second;
}

Graph::Source Graph::resolve(const Tensor& x, std::int64_t consumer, std::int64_t input) {
  require(x.defined(), ErrorKind::invalid_handle, "forward: undefined input tensor");
  const auto& route = x.impl()->route;
  auto producer = route.graph.lock();
  const Edge edge{consumer, input, next_edge_++};
  if (producer.get() == this && route.node >= 0) {
    nodes_[static_cast<std::size_t>(route.node)].outputs[static_cast<std::size_t>(route.slot)].consumers.push_back(edge);
    return {Source::Kind::node, route.node, route.slot, edge.order};
  }
  if (route.pass != 0 && route.pass != pass_) {
    if (x.released() || (producer && producer->recycled())) {
      fail(ErrorKind::graph, "forward: input " + to_string(x.shape()) + " belongs to recycled pass " +
                                 std::to_string(route.pass));
    }
    // a new edge onto a finished pass invalidates that pass's backward
    if (producer && producer->finished()) producer->mark_mutated();
  }
  const std::int64_t e = external_index(x);
  externals_[static_cast<std::size_t>(e)].consumers.push_back(edge);
  return {Source::Kind::external, e, 0, edge.order};
}

bool Graph::grant_in_place(const Tensor& x, const Source& source) const {
  if (!engine_->in_place_enabled() || source.kind != Source::Kind::node) return false;
  const Node& producer = nodes_[static_cast<std::size_t>(source.index)];
  const Output& out = producer.outputs[static_cast<std::size_t>(source.slot)];
  if (out.consumers.size() != 1 || out.saved_by_producer) return false;
  // views share the storage
  if (x.impl()->storage.use_count() != 1) return false;
  // consumers discovered later in this pass are unknown yet; a static graph
  // repeats the previous pass, so require it to have had a single consumer
  if (static_cast<std::size_t>(source.index) >= previous_.nodes.size()) return false;
  const auto& memo = previous_.nodes[static_cast<std::size_t>(source.index)];
  const Unit* unit = producer.owned ? nullptr : producer.unit;
  if (memo.unit != unit || memo.kind != producer.unit->kind()) return false;
  if (static_cast<std::size_t>(source.slot) >= memo.consumers.size()) return false;
  return memo.consumers[static_cast<std::size_t>(source.slot)] == 1;
}

std::vector<Tensor> Graph::record(LeafUnit& unit, std::shared_ptr<LeafUnit> owned, const std::vector<Tensor>& inputs) {
  require(!finished_, ErrorKind::graph, "record on a finished pass");
  const auto index = static_cast<std::int64_t>(nodes_.size());
  Node node;
  node.unit = &unit;
  node.owned = std::move(owned);
  node.ctx.engine = engine_;
  node.ctx.training = unit.training();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    node.sources.push_back(resolve(inputs[i], index, static_cast<std::int64_t>(i)));
    node.ctx.in_place.push_back(unit.in_place_candidate(i) && grant_in_place(inputs[i], node.sources.back()));
    node.ctx.input_shapes.push_back(inputs[i].shape());
  }
  std::vector<Tensor> outs;
  try {
    outs = unit.forward_op(node.ctx, inputs);
  } catch (...) {
    failed_ = true;
    throw;
  }
  for (std::size_t k = 0; k < outs.size(); ++k) {
    Tensor& out = outs[k];
    const bool aliases = std::any_of(inputs.begin(), inputs.end(), [&](const Tensor& x) { return x.same_as(out); });
    if (aliases) {
      // outputs are distinct handles so each carries its own route
      auto impl = std::make_shared<detail::TensorImpl>(*out.impl());
      impl->route = {};
      out = Tensor(std::move(impl));
    }
    Output o;
    o.tensor = out;
    o.saved_by_producer = std::any_of(node.ctx.saved.begin(), node.ctx.saved.end(),
                                      [&](const Tensor& s) { return s.shares_storage(out); });
    out.impl()->route = {weak_from_this(), pass_, index, static_cast<std::int64_t>(k)};
    node.outputs.push_back(std::move(o));
  }
  for (const auto& s : node.ctx.saved) {
    const bool is_input = std::any_of(inputs.begin(), inputs.end(), [&](const Tensor& x) { return x.same_as(s); });
    const bool is_output = std::any_of(outs.begin(), outs.end(), [&](const Tensor& y) { return y.same_as(s); });
    if (!is_input && !is_output && s.impl()->route.pass == 0) private_saved_.insert(s.impl());
  }
  nodes_.push_back(std::move(node));
  return outs;
}

void Graph::finish(const std::vector<Tensor>& outputs) {
  root_outputs_ = outputs;
  for (const auto& y : outputs) {
    require(y.defined(), ErrorKind::invalid_handle, "forward returned an undefined tensor");
    const auto& route = y.impl()->route;
    if (route.graph.lock().get() == this && route.node >= 0) {
      ++nodes_[static_cast<std::size_t>(route.node)].outputs[static_cast<std::size_t>(route.slot)].root_uses;
    } else {
      ++externals_[static_cast<std::size_t>(external_index(y))].root_uses;
    }
  }
  finished_ = true;
}

PassMemo Graph::memo() const {
  PassMemo m;
  for (const auto& n : nodes_) {
    PassMemo::Entry e;
    e.unit = n.owned ? nullptr : n.unit;
    e.kind = n.unit->kind();
    for (const auto& o : n.outputs) e.consumers.push_back(static_cast<std::int64_t>(o.consumers.size()) + o.root_uses);
    m.nodes.push_back(std::move(e));
  }
  return m;
}

bool Graph::releasable(const Tensor& t) const {
  if (!t.defined() || t.released()) return false;
  if (private_saved_.count(t.impl())) return true;
  const auto& route = t.impl()->route;
  if (route.graph.lock().get() != this || route.node < 0) return false;
  return nodes_[static_cast<std::size_t>(route.node)].outputs[static_cast<std::size_t>(route.slot)].root_uses == 0;
}

// Sums contributions in edge-registration order.
Tensor Graph::sum(std::vector<std::pair<std::int64_t, Tensor>>& parts) {
  std::stable_sort(parts.begin(), parts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Tensor> live;
  for (auto& [order, t] : parts) {
    if (t.defined()) live.push_back(t);
  }
  parts.clear();
  if (live.empty()) return {};
  if (live.size() == 1) return live[0];
  Tensor acc = engine_->add(live[0], live[1]);
  for (std::size_t i = 2; i < live.size(); ++i) engine_->accumulate(live[i], acc);
  acc.impl()->exclusive_grad = true;
  return acc;
}

std::vector<Tensor> Graph::backward(const std::vector<Tensor>& grads) {
  require(finished_ && !failed_, ErrorKind::state, "backward: the last forward pass did not complete");
  if (recycled_) fail(ErrorKind::graph, "backward: the pass was recycled by gc");
  if (mutated_) {
    fail(ErrorKind::graph, "backward: the computational graph changed after forward (new edges on pass " +
                               std::to_string(pass_) + ")");
  }
  require(!backwarded_, ErrorKind::state, "backward: already ran for this pass");
  require(grads.size() == root_outputs_.size(), ErrorKind::shape,
          "backward: expected " + std::to_string(root_outputs_.size()) + " output gradients, got " +
              std::to_string(grads.size()));
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].defined() && grads[k].shape() != root_outputs_[k].shape()) {
      fail(ErrorKind::shape, "backward: gradient " + std::to_string(k) + " has shape " + to_string(grads[k].shape()) +
                                 ", output has " + to_string(root_outputs_[k].shape()));
    }
  }
  for (const auto& n : nodes_) {
    for (const auto& s : n.ctx.saved) {
      if (s.released()) {
        fail(ErrorKind::graph, "backward: a tensor saved by '" + n.unit->name() + "' (" + n.unit->kind() +
                                   ") was deleted or overwritten after forward");
      }
    }
    for (const auto& s : n.ctx.scratch) {
      if (s->released) fail(ErrorKind::graph, "backward: scratch memory of '" + n.unit->name() + "' was released");
    }
  }

  backwarding_ = true;
  struct Reset {
    bool& flag;
    ~Reset() { flag = false; }
  } reset{backwarding_};

  const std::size_t count = nodes_.size();
  using Parts = std::vector<std::pair<std::int64_t, Tensor>>;
  std::vector<std::vector<Parts>> parts(count);
  std::vector<std::vector<std::int64_t>> received(count);
  for (std::size_t n = 0; n < count; ++n) {
    parts[n].resize(nodes_[n].outputs.size());
    received[n].assign(nodes_[n].outputs.size(), 0);
  }
  std::vector<Parts> external_parts(externals_.size());

  auto complete = [&](std::size_t n) {
    for (std::size_t s = 0; s < nodes_[n].outputs.size(); ++s) {
      const auto& o = nodes_[n].outputs[s];
      if (received[n][s] != static_cast<std::int64_t>(o.consumers.size()) + o.root_uses) return false;
    }
    return true;
  };

  const auto seeds = static_cast<std::int64_t>(root_outputs_.size());
  for (std::int64_t k = 0; k < seeds; ++k) {
    const auto& y = root_outputs_[static_cast<std::size_t>(k)];
    const auto& route = y.impl()->route;
    const std::int64_t order = k - seeds;
    if (route.graph.lock().get() == this && route.node >= 0) {
      auto n = static_cast<std::size_t>(route.node), s = static_cast<std::size_t>(route.slot);
      parts[n][s].emplace_back(order, grads[static_cast<std::size_t>(k)]);
      ++received[n][s];
    } else {
      external_parts[static_cast<std::size_t>(external_ids_.at(y.impl()))].emplace_back(order, grads[static_cast<std::size_t>(k)]);
    }
  }

  std::map<const detail::Storage*, std::int64_t> saved_refs;
  for (const auto& n : nodes_) {
    for (const auto& s : n.ctx.saved) {
      if (releasable(s)) ++saved_refs[s.impl()->storage.get()];
    }
  }

  std::priority_queue<std::int64_t> ready;
  for (std::size_t n = 0; n < count; ++n) {
    if (complete(n)) ready.push(static_cast<std::int64_t>(n));
  }
  std::vector<bool> done(count, false);
  std::size_t processed = 0;
  while (!ready.empty()) {
    const auto n = static_cast<std::size_t>(ready.top());
    ready.pop();
    if (done[n]) continue;
    done[n] = true;
    ++processed;
    Node& node = nodes_[n];
    std::vector<Tensor> dy(node.outputs.size());
    bool any = false;
    for (std::size_t s = 0; s < dy.size(); ++s) {
      dy[s] = sum(parts[n][s]);
      any = any || dy[s].defined();
    }
    std::vector<bool> need(node.sources.size());
    for (std::size_t i = 0; i < need.size(); ++i) {
      const auto& src = node.sources[i];
      need[i] = src.kind == Source::Kind::node ||
                externals_[static_cast<std::size_t>(src.index)].tensor.requires_grad();
    }
    std::vector<Tensor> dx(node.sources.size());
    if (any) {
      dx = node.unit->backward_op(node.ctx, dy, need);
      require(dx.size() == node.sources.size(), ErrorKind::state,
              "backward of '" + node.unit->kind() + "' returned the wrong number of gradients");
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!dx[i].defined()) continue;
        std::size_t sharing = 0;
        for (const auto& other : dx) sharing += other.defined() && other.shares_storage(dx[i]) ? 1 : 0;
        const Tensor* from = nullptr;
        for (const auto& g : dy) {
          if (g.defined() && g.shares_storage(dx[i])) from = &g;
        }
        dx[i].impl()->exclusive_grad = sharing == 1 && (from == nullptr || from->impl()->exclusive_grad);
      }
    }
    for (std::size_t i = 0; i < node.sources.size(); ++i) {
      const auto& src = node.sources[i];
      if (src.kind == Source::Kind::node) {
        auto p = static_cast<std::size_t>(src.index), s = static_cast<std::size_t>(src.slot);
        parts[p][s].emplace_back(src.order, dx[i]);
        ++received[p][s];
        if (complete(p)) ready.push(src.index);
      } else {
        external_parts[static_cast<std::size_t>(src.index)].emplace_back(src.order, dx[i]);
      }
    }
    if (engine_->eager_release()) {
      for (auto& s : node.ctx.saved) {
        if (!releasable(s)) continue;
        if (--saved_refs[s.impl()->storage.get()] == 0) s.release();
      }
      for (auto& s : node.ctx.scratch) s->release_now();
    }
  }
  require(processed == count, ErrorKind::graph, "backward: gradient slots never completed for some units");

  std::vector<Tensor> result;
  std::map<std::int64_t, Tensor> summed;
  for (const auto& x : root_inputs_) {
    auto it = external_ids_.find(x.impl());
    if (it == external_ids_.end()) {
      result.emplace_back();
      continue;
    }
    auto found = summed.find(it->second);
    if (found == summed.end()) {
      found = summed.emplace(it->second, sum(external_parts[static_cast<std::size_t>(it->second)])).first;
    }
    result.push_back(found->second);
  }
  for (auto& g : result) {
    if (g.defined()) g.impl()->exclusive_grad = false;
  }
  backwarded_ = true;
  return result;
}

std::size_t Graph::recycle() {
  if (backwarding_) fail(ErrorKind::graph, "gc called during backward");
  if (recycled_) return 0;
  std::size_t bytes = 0;
  auto drop = [&](const Tensor& t) {
    if (t.defined() && !t.released()) bytes += t.release();
  };
  for (auto& n : nodes_) {
    for (const auto& s : n.ctx.saved) {
      const bool external = external_ids_.count(s.impl()) != 0;
      if (!external && (private_saved_.count(s.impl()) || s.impl()->route.graph.lock().get() == this)) drop(s);
    }
    for (const auto& o : n.outputs) drop(o.tensor);
    for (auto& s : n.ctx.scratch) bytes += s->release_now();
  }
  nodes_.clear();
  externals_.clear();
  external_ids_.clear();
  private_saved_.clear();
  root_inputs_.clear();
  root_outputs_.clear();
  recycled_ = true;
  return bytes;
}

}  // namespace tensorforge::autograd
