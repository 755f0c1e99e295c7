#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "tensorforge/tensor/engine.hpp"
#include "tensorforge/tensor/tensor.hpp"

namespace tensorforge::autograd {

class Unit;
class LeafUnit;

// Per-invocation record handed to a leaf unit's forward and backward.
struct Invocation {
  Engine* engine = nullptr;
  bool training = true;
  // in-place grant per input, decided before the forward runs
  std::vector<bool> in_place;
  std::vector<Shape> input_shapes;
  // forward tensors needed by backward
  std::vector<Tensor> saved;
  // node-private device memory (pool argmax); released after backward
  std::vector<std::shared_ptr<detail::Storage>> scratch;
  // unit-specific switches
  bool forward_in_place = false;

  std::size_t save(const Tensor& t) {
    saved.push_back(t);
    return saved.size() - 1;
  }
};

// Consumer counts of one finished pass, used to predict the next pass of a
// static graph when granting in-place execution.
struct PassMemo {
  struct Entry {
    const Unit* unit = nullptr;  // null for functional units
    std::string kind;
    std::vector<std::int64_t> consumers;
  };
  std::vector<Entry> nodes;
};

// The dynamic acyclic graph of one top-level forward pass. Leaf invocations
// are nodes; a tensor consumed by a node adds an edge from its producer (or
// from an external input) in registration order.
class Graph : public std::enable_shared_from_this<Graph> {
 public:
  struct Source {
    enum class Kind { node, external } kind = Kind::external;
    std::int64_t index = 0;  // node index or external index
    std::int64_t slot = 0;
    std::int64_t order = 0;  // edge registration order
  };

  struct Edge {
    std::int64_t consumer = 0;
    std::int64_t input = 0;
    std::int64_t order = 0;
  };

  struct Output {
    Tensor tensor;
    std::vector<Edge> consumers;
    bool saved_by_producer = false;
    std::int64_t root_uses = 0;
  };

  struct Node {
    LeafUnit* unit = nullptr;
    std::shared_ptr<LeafUnit> owned;  // functional units live as long as their node
    std::vector<Source> sources;
    std::vector<Output> outputs;
    Invocation ctx;
  };

  struct External {
    Tensor tensor;
    std::vector<Edge> consumers;
    std::int64_t root_uses = 0;
  };

  Graph(Engine& engine, std::uint64_t pass, PassMemo previous, const Unit* root);

  static Graph* active() noexcept;

  // Installs the graph as the recording target of this thread.
  class Scope {
   public:
    explicit Scope(Graph* g);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* previous_;
  };

  std::uint64_t pass() const noexcept { return pass_; }
  Engine& engine() const noexcept { return *engine_; }

  // Records one leaf invocation; returns its outputs.
  std::vector<Tensor> record(LeafUnit& unit, std::shared_ptr<LeafUnit> owned, const std::vector<Tensor>& inputs);

  void begin(const std::vector<Tensor>& inputs);
  void finish(const std::vector<Tensor>& outputs);
  void fail_pass() noexcept { failed_ = true; }

  bool finished() const noexcept { return finished_; }
  bool mutated() const noexcept { return mutated_; }
  bool recycled() const noexcept { return recycled_; }
  bool backwarding() const noexcept { return backwarding_; }
  void mark_mutated() noexcept { mutated_ = true; }

  std::vector<Tensor> backward(const std::vector<Tensor>& grads);
  std::size_t recycle();

  PassMemo memo() const;
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<External>& externals() const noexcept { return externals_; }

 private:
  Source resolve(const Tensor& x, std::int64_t consumer, std::int64_t input);
  bool grant_in_place(const Tensor& x, const Source& source) const;
  std::int64_t external_index(const Tensor& x);
  Tensor sum(std::vector<std::pair<std::int64_t, Tensor>>& parts);
  bool releasable(const Tensor& t) const;

  Engine* engine_;
  std::uint64_t pass_;
  PassMemo previous_;
  const Unit* root_;
  std::vector<Node> nodes_;
  std::vector<External> externals_;
  std::map<const detail::TensorImpl*, std::int64_t> external_ids_;
  // saved tensors created by a node for its own backward
  std::set<const detail::TensorImpl*> private_saved_;
  std::vector<Tensor> root_inputs_;
  std::vector<Tensor> root_outputs_;
  std::int64_t next_edge_ = 0;
  bool finished_ = false;
  bool failed_ = false;
  bool mutated_ = false;
  bool recycled_ = false;
  bool backwarding_ = false;
  bool backwarded_ = false;
};

}  // namespace tensorforge::autograd
