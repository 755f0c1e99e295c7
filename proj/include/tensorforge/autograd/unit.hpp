#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tensorforge/autograd/graph.hpp"
#include "tensorforge/tensor/engine.hpp"

namespace tensorforge::autograd {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// A node of the computational graph. forward() on a unit while no pass is
// recording starts a new pass with this unit as its root; backward() and gc()
// act on the last pass rooted here.
class Unit {
 public:
  explicit Unit(std::string kind);
  virtual ~Unit();

  Unit(const Unit&) = delete;
  Unit& operator=(const Unit&) = delete;

  // Binds the unit tree to an engine, names it and allocates parameters.
  // Initial values derive from `seed` and each parameter's name.
  Unit& init(Engine& engine, const std::string& name = "", std::uint64_t seed = 0);
  bool initialized() const noexcept { return engine_ != nullptr; }
  Engine& engine() const;

  const std::string& kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }

  std::vector<Tensor> forward(const std::vector<Tensor>& inputs);
  Tensor forward(const Tensor& x);

  // Takes the gradients of the last pass's outputs and returns the gradients
  // of its inputs (undefined for inputs that do not require them).
  std::vector<Tensor> backward(const std::vector<Tensor>& grads);
  Tensor backward(const Tensor& grad);

  // Releases activations and intermediates of the last pass; returns bytes.
  std::size_t gc();

  // Trainable parameters with their gradient accumulators, by name.
  std::vector<Param*> params();
  // Parameters plus non-trainable state (running statistics), by name.
  std::vector<NamedTensor> state();

  Unit& train(bool on = true);
  Unit& eval() { return train(false); }
  bool training() const noexcept { return training_; }

  virtual std::vector<Unit*> children() { return {}; }

  const std::shared_ptr<Graph>& last_graph() const noexcept { return graph_; }

 protected:
  // Runs the unit inside the active pass.
  virtual std::vector<Tensor> run(const std::vector<Tensor>& inputs) = 0;
  virtual void on_init(std::uint64_t) {}
  // Seed of a parameter's initializer: a sub-stream named after the parameter.
  static std::uint64_t param_seed(std::uint64_t seed, const std::string& name);

  Param& add_param(const std::string& local, const Shape& shape);
  Tensor& add_buffer(const std::string& local, const Shape& shape, float value);

  Engine* engine_ = nullptr;
  std::vector<Param> params_;
  std::vector<NamedTensor> buffers_;

 private:
  void bind(Engine& engine, const std::string& name, std::uint64_t seed);
  void collect(std::vector<Param*>& out);
  void collect_state(std::vector<NamedTensor>& out);

  std::string kind_;
  std::string name_;
  bool training_ = true;
  std::shared_ptr<Graph> graph_;
  PassMemo memo_;
  std::uint64_t passes_ = 0;

  friend class Module;
};

// A unit whose forward/backward are operator calls; each invocation inside a
// pass becomes one graph node.
class LeafUnit : public Unit {
 public:
  using Unit::Unit;

  virtual std::vector<Tensor> forward_op(Invocation& ctx, const std::vector<Tensor>& x) = 0;
  // dy[i] may be undefined (no gradient reached that output). need_dx[i] is
  // false for inputs whose gradient nobody asked for.
  virtual std::vector<Tensor> backward_op(Invocation& ctx, const std::vector<Tensor>& dy,
                                          const std::vector<bool>& need_dx) = 0;
  // Whether the unit can overwrite input i in place.
  virtual bool in_place_candidate(std::size_t) const { return false; }

  // Records an invocation of a functional (not owned by any module) unit.
  static std::vector<Tensor> invoke(std::shared_ptr<LeafUnit> unit, const std::vector<Tensor>& x);

 protected:
  std::vector<Tensor> run(const std::vector<Tensor>& inputs) override;
};

// User composition of units ("__forward__").
class Module : public Unit {
 public:
  explicit Module(std::string kind = "module") : Unit(std::move(kind)) {}

  std::vector<Unit*> children() override;

 protected:
  template <typename U>
  U& add(const std::string& local, std::shared_ptr<U> unit) {
    U& ref = *unit;
    children_.emplace_back(local, std::move(unit));
    return ref;
  }

  virtual std::vector<Tensor> forward_impl(const std::vector<Tensor>& x) = 0;
  std::vector<Tensor> run(const std::vector<Tensor>& inputs) override { return forward_impl(inputs); }

 private:
  std::vector<std::pair<std::string, std::shared_ptr<Unit>>> children_;
  friend class Unit;
};

}  // namespace tensorforge::autograd
