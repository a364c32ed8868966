#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gateformer/error.hpp"
#include "gateformer/tensor.hpp"

namespace gateformer {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Attention probabilities captured during a forward pass, for inspection.
template <typename T>
struct AttentionRecord {
  std::string stage;
  Tensor<T> probs;  // [batch, heads, queries, keys]
};

/// Define-by-run gradient tape. Nodes are appended in execution order, and
/// backward() replays their adjoints in exact reverse order. A tape is
/// single-use: build one per forward pass.
template <typename T>
class Tape {
 public:
  /// Called with the node's output gradient and output value; accumulates
  /// into the gradients of the node's inputs.
  using BackwardFn = std::function<void(Tape&, std::span<const T>, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value, const char* op = "constant") {
    return push(op, std::move(value), false, nullptr, nullptr);
  }

  /// Registers a learnable leaf. Registering the same Parameter twice returns
  /// the same node, so every use accumulates into one gradient.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>{this, it->second};
    Var<T> v = push(p.name.c_str(), p.value, true, nullptr, &p);
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  /// Appends the output of a primitive op. `fn` is dropped when no input needs a gradient.
  Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var<T>& in : inputs) {
      if (in.tape != this) throw UsageError(std::string("op '") + op + "' mixes tapes");
      needs = needs || nodes_[in.id].requires_grad;
    }
    return push(op, std::move(value), needs, needs ? std::move(fn) : nullptr, nullptr);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool requires_grad(Var<T> v) const { return requires_grad(v.id); }

  /// Gradient buffer of a node, allocated zero-filled on first access.
  std::span<T> grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(n.value.size(), T{0});
    return n.grad;
  }
  std::span<T> grad(Var<T> v) { return grad(v.id); }

  std::size_t size() const noexcept { return nodes_.size(); }
  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }

  /// Reverse-mode sweep from a scalar loss. Parameter leaves receive their
  /// adjoint added into Parameter::grad exactly once. The tape is consumed.
  void backward(Var<T> loss) {
    if (consumed_) throw UsageError("backward called twice on the same tape");
    if (loss.tape != this) throw UsageError("loss belongs to a different tape");
    if (value(loss.id).size() != 1) {
      throw UsageError("backward requires a scalar loss, got " + shape_str(value(loss.id).shape()));
    }
    consumed_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] = T{1};
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      for (T g : n.grad) {
        if (!std::isfinite(g)) throw NonFiniteError(std::string("gradient flowing into op '") + n.op + "'");
      }
      if (n.param != nullptr) {
        auto& dst = n.param->grad;
        if (dst.shape() != n.value.shape()) dst = Tensor<T>(n.value.shape());
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
      } else if (n.backward) {
        // Nodes are never appended during the sweep, so n.grad stays put while
        // the callback writes into its inputs' buffers.
        n.backward(*this, n.grad, n.value);
      }
    }
  }

  void set_attention_log(std::vector<AttentionRecord<T>>* log) noexcept { attention_log_ = log; }
  std::vector<AttentionRecord<T>>* attention_log() const noexcept { return attention_log_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    const char* op = "";
  };

  Var<T> push(const char* op, Tensor<T> value, bool requires_grad, BackwardFn fn, Parameter<T>* p) {
    if (!value.all_finite()) throw NonFiniteError(std::string("op '") + op + "' produced NaN/Inf");
    Node n;
    n.value = std::move(value);
    n.backward = std::move(fn);
    n.param = p;
    n.requires_grad = requires_grad;
    n.op = op;
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  std::vector<AttentionRecord<T>>* attention_log_ = nullptr;
  bool consumed_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

}  // namespace gateformer
