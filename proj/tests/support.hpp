#pragma once

// Small helpers shared by the module-level tests.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tensorforge/autograd/unit.hpp"
#include "tensorforge/error.hpp"
#include "tensorforge/tensor/engine.hpp"

namespace support {

using tensorforge::ErrorKind;
using tensorforge::Tensor;

inline std::optional<ErrorKind> kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const tensorforge::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

inline std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const tensorforge::Error& e) {
    return e.what();
  }
  return {};
}

// A module whose forward is a lambda over its registered children.
class Lambda : public tensorforge::autograd::Module {
 public:
  using Body = std::function<std::vector<Tensor>(Lambda&, const std::vector<Tensor>&)>;
  explicit Lambda(Body body) : Module("lambda"), body_(std::move(body)) {}

  template <typename U>
  U& child(const std::string& name, std::shared_ptr<U> unit) {
    return add(name, std::move(unit));
  }

 protected:
  std::vector<Tensor> forward_impl(const std::vector<Tensor>& x) override { return body_(*this, x); }

 private:
  Body body_;
};

inline std::vector<float> host(const Tensor& t) { return t.to_host(); }

}  // namespace support
